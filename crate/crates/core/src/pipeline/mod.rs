//! Preprocessing, augmentation and batch streaming.

mod augment;
mod image;
mod stream;

pub use self::augment::{augment, AugmentConfig, AugmentParams, FillMode};
pub use self::image::{decode_image, preprocess, preprocess_to, ImageTensor, MODEL_INPUT_SIZE};
pub use self::stream::{images_to_tensor, Batch, BatchPlan, BatchStream, ImageSource, Sample, StreamMode};
