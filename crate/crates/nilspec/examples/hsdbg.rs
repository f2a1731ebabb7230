use nilspec::symbols::GFunction;

fn main() {
    let f = GFunction::h1_gaussian(1.3, 0.25);
    let norm = f.terms[0].coef.re; // 1/(2 pi sigma_v^2)
    let sv: f64 = 1.3;
    let sz: f64 = 0.25;
    for lam in [0.3, 0.5, 1.0, 2.0, 5.0] {
        let got = nilspec::symbols::debug_hs_norm(&f, lam);
        // exact: (2 pi / lam) * |zft|^2 * N^2 * pi sv^2, zft = e^{-sz^2 lam^2/2}
        let zft2 = (-(sz * sz) * lam * lam).exp();
        let exact = (2.0 * std::f64::consts::PI / lam) * zft2 * norm * norm
            * std::f64::consts::PI * sv * sv;
        println!("lam={lam}: got={got:.6e} exact={exact:.6e} ratio={:.4}", got / exact);
    }
}
