//! Exploratory probes of the 11-layer GaN/Ag structure; run with
//! `cargo test -p spdc-core --test explore_sectionv -- --ignored --nocapture`.

use num_complex::Complex64;
use spdc_core::biphoton::{BiphotonContext, Channel};
use spdc_core::consts::{lambda_nm_from_omega, omega_from_lambda_nm};
use spdc_core::materials::MaterialSet;
use spdc_core::pump::PumpSpec;
use spdc_core::stack::{
    locate_resonances, solve_outgoing, transmittance, Layer, LayeredStructure, Pol, SphericalMode,
};

fn section_v(set: &MaterialSet) -> LayeredStructure {
    let vac = set.by_name("vacuum").unwrap();
    let gan = set.by_name("GaN").unwrap();
    let ag = set.by_name("Ag").unwrap();
    let mut layers = Vec::new();
    for i in 0..11 {
        if i % 2 == 0 {
            layers.push(Layer { material: gan, thickness: 101.752e-9 });
        } else {
            layers.push(Layer { material: ag, thickness: 18.083e-9 });
        }
    }
    LayeredStructure::new(vac, vac, layers)
}

#[test]
#[ignore]
fn probe_pump_band() {
    let set = MaterialSet::defaults();
    let s = section_v(&set);
    let w = omega_from_lambda_nm(400.0);
    let (t, r, a) = transmittance(&s, &set, &SphericalMode::new(w, 0.0, 0.0, Pol::Te)).unwrap();
    println!("pump 400nm TE normal: T={t:.4} R={r:.4} A={a:.4}");
    // scan d_metal at fixed d_diel for ridge sense
    for dm in [10.0, 14.0, 18.083, 22.0, 26.0] {
        let vac = set.by_name("vacuum").unwrap();
        let gan = set.by_name("GaN").unwrap();
        let ag = set.by_name("Ag").unwrap();
        let mut layers = Vec::new();
        for i in 0..11 {
            layers.push(if i % 2 == 0 {
                Layer { material: gan, thickness: 101.752e-9 }
            } else {
                Layer { material: ag, thickness: dm * 1e-9 }
            });
        }
        let s2 = LayeredStructure::new(vac, vac, layers);
        let (t2, _, a2) =
            transmittance(&s2, &set, &SphericalMode::new(w, 0.0, 0.0, Pol::Te)).unwrap();
        println!("  d_metal={dm:7.3} nm: T={t2:.4} A={a2:.4}");
    }
}

#[test]
#[ignore]
fn probe_tm_resonances() {
    let set = MaterialSet::defaults();
    let s = section_v(&set);
    for theta_deg in [55.0f64, 58.0, 61.095, 64.0, 67.0] {
        let th = theta_deg.to_radians();
        let lo = omega_from_lambda_nm(1000.0);
        let hi = omega_from_lambda_nm(700.0);
        let found =
            locate_resonances(&s, &set, Pol::Tm, th, 0.0, (lo, hi), 3000, 0.01).unwrap();
        println!("theta_i = {theta_deg} deg:");
        for r in &found {
            let sol = solve_outgoing(
                &s,
                &set,
                &SphericalMode::new(r.omega, th, 0.0, Pol::Tm),
                Complex64::new(1.0, 0.0),
                Complex64::new(0.0, 0.0),
            )
            .unwrap();
            println!(
                "  lambda = {:9.4} nm  gamma/omega = {:.3e}  FWHM_lambda = {:.3e} nm  enhancement = {:.3e}",
                lambda_nm_from_omega(r.omega),
                r.gamma / r.omega,
                lambda_nm_from_omega(r.omega) * r.gamma / r.omega,
                sol.max_internal_amplitude()
            );
        }
    }
}

#[test]
#[ignore]
fn probe_signal_peak_scan() {
    let set = MaterialSet::defaults();
    let s = section_v(&set);
    let pump = PumpSpec::normal_incidence(omega_from_lambda_nm(400.0), 1e-3, Pol::Te);
    let ctx = BiphotonContext::new(&s, &set, pump, Channel::forward(Pol::Te, Pol::Tm));

    // For each signal angle, find TM idler resonances at the matched idler
    // angle and evaluate the signal density on the resonance.
    let mut best = (0.0f64, 0.0f64, 0.0f64);
    let mut theta_deg = 30.0;
    while theta_deg <= 70.0 {
        let ts = (theta_deg as f64).to_radians();
        // matched idler angle depends on omega_s; iterate twice
        let mut ws_guess = omega_from_lambda_nm(740.0);
        for _ in 0..1 {
            let (ti, _) = match ctx.matched_idler_direction(ws_guess, ts, 0.0) {
                Some(x) => x,
                None => break,
            };
            let lo = omega_from_lambda_nm(980.0);
            let hi = omega_from_lambda_nm(760.0);
            let found = locate_resonances(&s, &set, Pol::Tm, ti, 0.0, (lo, hi), 1500, 0.01)
                .unwrap_or_default();
            for r in &found {
                let ws = pump.omega0 - r.omega;
                if ws <= 0.0 {
                    continue;
                }
                // re-match the idler angle at this exact ws
                if let Some((ti2, _)) = ctx.matched_idler_direction(ws, ts, 0.0) {
                    if let Some(r2) = spdc_core::stack::polish_resonance(
                        &s, &set, Pol::Tm, ti2, 0.0, r.omega, r.gamma.max(1e6),
                    ) {
                        let ws2 = pump.omega0 - r2.omega;
                        let seed = spdc_core::numerics::PeakSeed {
                            position: ti2,
                            width: 1e-5,
                        };
                        let n = ctx
                            .signal_density(ws2, ts, 0.0, 1e-4, &[seed])
                            .map(|q| q.value)
                            .unwrap_or(0.0);
                        println!(
                            "theta_s={:6.2} deg lambda_s={:9.4} nm (idler {:9.4} nm at {:6.2} deg, G/w={:.2e}): n_s = {:.4e}",
                            theta_deg,
                            lambda_nm_from_omega(ws2),
                            lambda_nm_from_omega(r2.omega),
                            ti2.to_degrees(),
                            r2.gamma / r2.omega,
                            n
                        );
                        if n > best.0 {
                            best = (n, ws2, ts);
                        }
                        ws_guess = ws2;
                    }
                }
            }
        }
        theta_deg += 2.0;
    }
    println!(
        "BEST: n_s = {:.4e} at lambda_s = {:.4} nm, theta_s = {:.3} deg",
        best.0,
        lambda_nm_from_omega(best.1),
        best.2.to_degrees()
    );
}
