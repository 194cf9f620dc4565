//! The two learned reconstruction stages: local touch-chart prediction
//! (depth from readings plus Chamfer-driven chart fitting) and global chart
//! deformation with touch enforcement, together with their training loops.

mod deform;
mod depth_net;
mod fit;
mod pipeline;
mod train;

pub use deform::{
    assemble_atlas, deform, deform_to_mesh, deform_traced, successful_charts, DeformConfig,
    DeformModel, SceneInput,
};
pub use depth_net::{
    depth_to_cloud, image_to_tensor, touch_mask, train_depth_predictor, DepthNetConfig,
    DepthPredictor, DepthSample, DepthTrainConfig, DepthTrainReport,
};
pub use fit::{fit_touch_chart, FitConfig, FitReport};
pub use pipeline::{predict, touch_charts_for_samples, PredictConfig, Prediction};
pub use train::{eval_scenes, train_deform, DeformTrainConfig, DeformTrainReport, TrainScene};
