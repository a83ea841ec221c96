//! Regenerates `assets/identity_embedder.ckpt`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use hairshift_core::data_synth::PortraitSpec;
use hairshift_core::metrics::embedder::{random_view, train_identity_embedder};
use hairshift_core::metrics::identity_similarity;

fn main() {
    let steps: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(3000);
    let e = train_identity_embedder(7, steps, 6, 1e-3);
    let mut rng = ChaCha8Rng::seed_from_u64(12345);
    let (mut same, mut cross) = (0.0, 0.0);
    let n = 100;
    for i in 0..n {
        let a = PortraitSpec::random(900_000 + i, 1);
        let b = PortraitSpec::random(950_000 + i, 1);
        let (a1, a2, b1) = (random_view(&a, &mut rng), random_view(&a, &mut rng), random_view(&b, &mut rng));
        same += identity_similarity(&a1, &a2, &e) / n as f64;
        cross += identity_similarity(&a1, &b1, &e) / n as f64;
    }
    println!("same {same:.3} cross {cross:.3} gap {:.3}", same - cross);
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/assets/identity_embedder.ckpt");
    std::fs::write(path, e.to_bytes()).unwrap();
    println!("wrote {path}");
}
