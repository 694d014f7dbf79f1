use fracgelfand::mesh::{KernelWeights, Mesh};
use fracgelfand::solve::{solve_dirichlet, SolveOptions};
use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::time::Instant;

fn main() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for &(s, p) in &[(0.3, 1.5), (0.7, 1.5), (0.3, 2.0), (0.3, 3.0), (0.7, 3.0), (0.5, 2.5)] {
        let n = 64;
        let kw = KernelWeights::build(Mesh::new(-1.0, 1.0, n).unwrap(), s, p).unwrap();
        let t0 = Instant::now();
        let reps = 20;
        for _ in 0..reps {
            let g = DVector::from_fn(n, |_, _| rng.gen_range(-1.0f64..2.0));
            let opts = SolveOptions { tol: 1e-12, ..Default::default() };
            solve_dirichlet(&kw, &g, &opts).unwrap();
        }
        println!("s={s} p={p}: {:.1} ms/solve", t0.elapsed().as_secs_f64() * 1000.0 / reps as f64);
    }
}
