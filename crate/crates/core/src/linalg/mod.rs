pub mod pca;
pub mod sparse;
