//! Regenerates `data/demo.csv`: Y = 2 X1 + N(0, 1) with an inert X2.
//!
//! Usage: cargo run --example demo_data > crates/core/data/demo.csv

use qrf_vimp::seed;
use qrf_vimp::simlab::{generate, DgpSpec};

fn main() -> qrf_vimp::Result<()> {
    let spec = DgpSpec::linear_gaussian(vec![2.0, 0.0], 1.0, 2)?;
    let mut rng = seed::rng_from(20_240_601);
    let data = generate(&spec, 4000, &mut rng)?;
    println!("x1,x2,y");
    for i in 0..data.n() {
        let x = data.row(i);
        println!("{},{},{}", x[0], x[1], data.y()[i]);
    }
    Ok(())
}
