use nilspec::symbols::{plancherel_check, GFunction, PlancherelOptions, ZProfile};
use std::time::Instant;

fn main() {
    // plain gaussian
    let f1 = GFunction::h1_gaussian(1.3, 0.25);
    // z-mean-zero profile
    let mut f2 = GFunction::h1_gaussian(1.0, 0.35);
    f2.terms[0].z_profiles[0] = ZProfile::DzGaussian { sigma: 0.35 };
    // modulated + off-centre
    let mut f3 = GFunction::h1_gaussian(1.1, 0.3);
    f3.terms[0].v_center = vec![0.3, -0.2];
    f3.terms[0].v_mod = vec![1.5, -0.8];
    for (name, f) in [("plain", &f1), ("dz", &f2), ("modcen", &f3)] {
        let t0 = Instant::now();
        match plancherel_check(f, PlancherelOptions::default()) {
            Ok(r) => println!(
                "{name}: lhs={:.6e} rhs={:.6e} rel={:.3e} lmax={:.2} nmax={} ({:.2?})",
                r.lhs, r.rhs, r.rel_err, r.lambda_max, r.n_max_used, t0.elapsed()
            ),
            Err(e) => println!("{name}: ERR {e}"),
        }
    }
}
