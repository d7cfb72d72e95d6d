//! Model zoo: reference classifiers, the six generative frameworks, their
//! losses, and the checkpoint container.

pub mod batch;
pub mod checkpoint;
pub mod classifier;
pub mod generator;
pub mod losses;

pub use batch::{samples_to_tensor, EpochIter, SynthSet, TrainPool};
pub use classifier::{Classifier, ClassifierArch, ClassifierCnn, CnnVariant, MlpClassifier};
pub use generator::{split_budget, GenArch, GenBackbone, GenFamily, GeneratorModel};
