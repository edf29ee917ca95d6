//! Polar-code workbench: reference SC/ML decoders and neural decoders built
//! by concatenating sub-decoders with analytically derived glue layers.

pub mod builder;
pub mod channel;
pub mod decoders;
mod error;
pub mod eval;
pub mod nn;
pub mod polar;
pub mod rng;
pub mod trainer;

pub use builder::{build_decoder, concat, harden, BuildOptions, LeafPolicy, NnDecoder};
pub use channel::{sigma_from_snr, ChannelConfig, Frame};
pub use decoders::{f_function, g_function, ml_decode, sc_decode, FVariant, MlDecoder, ScDecoder};
pub use error::{Error, Result};
pub use eval::{compare_decoders, run_ber, BerPoint, Decoder, SimConfig, StopRule};
pub use nn::{Activation, DenseLayer, Matrix, NeuralDecoder};
pub use polar::{BitWord, PolarCode, XorSubsets};
pub use trainer::{gen_dataset, mine_hard_cases, train, Dataset, TrainConfig};
