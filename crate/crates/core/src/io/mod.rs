//! Durable formats: quantized model files, PE-array weight packing and
//! CIFAR-10 batches.

mod cifar;
mod model_file;
mod pack;

pub use cifar::{load_cifar10, synthetic_batch, Cifar10Set, CifarRecord, CLASSES, IMAGE_BYTES, RECORD_BYTES};
pub use model_file::{load_model, read_model, save_model, write_model, MAGIC, VERSION};
pub use pack::{pack_weights, unpack_weights, PackedWeights};
