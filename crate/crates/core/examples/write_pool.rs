//! Regenerates the bundled haplotype pool: `cargo run --example write_pool > data/haplotype_pool.txt`.

use tegene::simulate::{synthetic_pool, BUNDLED_POOL_SEED};

fn main() {
    print!("{}", synthetic_pool(BUNDLED_POOL_SEED, 120).to_text());
}
