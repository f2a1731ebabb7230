use nilspec::manifold::{assemble_sublaplacian, eigensolve, match_spectrum, EigOptions, Grid};
use std::time::Instant;

fn main() {
    for n in [24usize, 48] {
        let grid = Grid::new(n);
        let t0 = Instant::now();
        let a = assemble_sublaplacian(&grid, None).unwrap();
        let t_asm = t0.elapsed();
        let t0 = Instant::now();
        let m = 15;
        match eigensolve(&a, m, EigOptions { block_extra: 12, ..Default::default() }) {
            Ok(pairs) => {
                let t_eig = t0.elapsed();
                let eigs: Vec<f64> = pairs.iter().map(|p| p.e).collect();
                println!("n={n} dim={} nnz={} asm={t_asm:.2?} eig={t_eig:.2?}", grid.dim(), a.nnz());
                println!("  eigs: {}", eigs.iter().map(|e| format!("{e:.4}")).collect::<Vec<_>>().join(" "));
                for (oe, mean, rel, ok) in match_spectrum(&grid, &eigs, 4) {
                    println!("  oracle {oe:9.4} cluster {mean:9.4} rel {rel:.3e} ok={ok}");
                }
            }
            Err(e) => println!("n={n}: eigensolve failed: {e}"),
        }
    }
}
