//! Dense `f64` tensors, tape-based reverse-mode differentiation and the Adam
//! optimizer used for both network training and embedding inversion.

mod linalg;
pub mod optim;
pub mod snapshot;
pub mod tape;
pub mod tensor;

pub use optim::Adam;
pub use snapshot::{decode_tensor, encode_tensor, load_tensor, save_tensor};
pub use tape::{avg_pool, Gradients, Tape, Var};
pub use tensor::Tensor;


use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The crate-wide deterministic generator.
pub type Rng64 = ChaCha8Rng;

pub fn seeded_rng(seed: u64) -> Rng64 {
    ChaCha8Rng::seed_from_u64(seed)
}
