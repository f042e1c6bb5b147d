//! Hurwitz quaternion multiplicative quantization for transformer KV caches.
//!
//! Head vectors are split into 4-element chunks. Each chunk is stored as a
//! direction, the nearest codeword of a joint codebook `{p · s}` built from
//! the 24 unit Hurwitz quaternions `p` and a seeded set of Haar-random unit
//! quaternions `s`, plus a uniformly quantized radius relative to a per-token
//! binary16 scale. Chunks far above the median norm can be kept verbatim in
//! half precision.
//!
//! ```
//! use hqmq::{decode_tensor, encode_tensor, CodecConfig, TensorShape};
//!
//! let shape = TensorShape::new(1, 2, 3, 8).unwrap();
//! let data: Vec<f64> = (0..shape.num_elements()).map(|i| (i as f64).sin()).collect();
//! let qt = encode_tensor(&data, shape, CodecConfig::new(24, 4, 7)).unwrap();
//! let back = decode_tensor(&qt).unwrap();
//! assert_eq!(back.len(), data.len());
//! ```

pub mod attention;
pub mod baselines;
pub mod budget;
pub mod codec;
pub mod error;
pub mod hurwitz;
pub mod joint;
pub mod kvpack;
pub mod outlier;
pub mod packing;
pub mod quat;
pub mod rng;
pub mod scalar;
pub mod synth;

pub use attention::{fused_attend, fused_attend_tiled, reference_attend, AttentionConfig, KV_TILE};
pub use budget::{budget, cache_size, BitBudget, BitMode, HqmqLabel, ModelShape};
pub use codec::{
    decode_tensor, decode_tensor_with, encode_tensor, encode_tensor_with, fake_quantize, ChunkCode, CodecConfig,
    QuantizedTensor, TensorShape,
};
pub use error::{HqmqError, Result};
pub use hurwitz::{build_2t, verify_group, GroupReport, PrimaryCodebook};
pub use joint::{build_joint, build_secondary, JointCodebook, Role, SecondaryCodebook};
pub use kvpack::{read_kvpack, write_kvpack, RawDtype, RawTensorFile};
pub use outlier::{effective_bits, MedianPooling, OutlierPolicy};
pub use packing::{estimate_covering, fit_covering_rate, CoveringEstimate};
pub use quat::{hamilton, Quaternion};
pub use rng::SeededRng;
pub use scalar::RadiusCode;
