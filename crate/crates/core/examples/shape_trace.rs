//! Prints the tensor shapes of one forward pass and its wall time.

use burn::tensor::{Distribution, Tensor};
use hcm::{CpuBackend, HcmConfig};

fn main() -> hcm::Result<()> {
    let device = Default::default();
    let model = HcmConfig::new().init::<CpuBackend>(0, &device);
    let x = Tensor::<CpuBackend, 4>::random([2, 3, 352, 352], Distribution::Default, &device);
    let start = std::time::Instant::now();
    let trace = model.trace(x)?;
    let f = &trace.features;
    for (name, t) in [("f0", &f.f0), ("f1", &f.f1), ("f2", &f.f2), ("f3", &f.f3), ("f4", &f.f4)] {
        println!("{name}: {:?}", t.dims());
    }
    println!("f5: {:?}", f.f5.as_ref().map(|t| t.dims()));
    for (s, p) in trace.predictions.levels().iter().enumerate() {
        println!("p{}: {:?}", s + 1, p.dims());
    }
    println!("elapsed: {:.2?}", start.elapsed());
    Ok(())
}
