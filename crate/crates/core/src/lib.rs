//! Multimodal unpaired image-to-image translation by latent filter scaling.
//!
//! A Gaussian latent code is mapped by a small fully-connected network to
//! one scalar per generator filter; each scalar multiplies its filter's
//! output feature map. Training uses only the least-squares GAN loss.

pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod latent;
pub mod networks;
pub mod ops;
pub mod scaledconv;
pub mod tensor;
pub mod train;
pub mod verify;

pub use error::{Error, Result};
pub use latent::{
    init_mapper, interpolate_codes, map_latent, sample_latent, Activation, FilterScales,
    LatentCode, Mapper, MapperConfig,
};
pub use networks::{
    build_discriminator, build_generator, Discriminator, DiscriminatorConfig, Generator,
    GeneratorConfig, ModulatedLayers, Norm, ScalePosition,
};
pub use scaledconv::{conv_forward, scale_filters, scaled_conv_forward, ConvSpec};
pub use tensor::{DType, Element, ImageTensor, Tensor};
pub use train::{LossConfig, TrainConfig, TrainState};
