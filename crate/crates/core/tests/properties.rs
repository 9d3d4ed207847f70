use kw_core::canonical::{
    default_partition, integrate_transfer, szego_sum, szego_sum_default, weyl_m, Cell, Hamiltonian,
};
use kw_core::dirac::{dirac_hamiltonian, dirac_szego_sum, transfer_n0, DiracPotential, Form, ScalarPotential};
use kw_core::evolution::{discretize, free_dirac_evolution, step_leapfrog, Bump, DiracSamples};
use kw_core::linalg::{det, Sym2};
use kw_core::measures::{entropy, scattering_multiplier, szego_log_integral, PointMass, SpectralMeasure, Support};
use kw_core::string::{
    default_eta_grid, hamiltonian_to_string, string_szego_criterion, string_to_hamiltonian, string_transfer, Atom,
    MassDistribution,
};
use kw_core::Complex64;
use proptest::prelude::*;

fn upper() -> impl Strategy<Value = Complex64> {
    (-2.0..2.0f64, 0.1..1.5f64).prop_map(|(a, b)| Complex64::new(a, b))
}

fn line_measure() -> impl Strategy<Value = SpectralMeasure> {
    prop::collection::vec((-8.0..8.0f64, 0.05..2.0f64, 0.2..3.0f64), 1..4).prop_map(|bumps| {
        let grid: Vec<f64> = (0..=300).map(|i| -30.0 + 0.2 * i as f64).collect();
        let density = grid
            .iter()
            .map(|&x| {
                0.5 / (1.0 + x * x) + bumps.iter().map(|(c, a, w)| a * (-((x - c) / w).powi(2)).exp()).sum::<f64>()
            })
            .collect();
        SpectralMeasure::new(Support::FullLine, grid, density, vec![], None).unwrap().with_fitted_tail()
    })
}

fn hamiltonian() -> impl Strategy<Value = Hamiltonian> {
    hamiltonian_with(0.05..0.4, 1..9)
}

fn long_hamiltonian() -> impl Strategy<Value = Hamiltonian> {
    hamiltonian_with(0.5..2.0, 3..10)
}

fn hamiltonian_with(len: std::ops::Range<f64>, cells: std::ops::Range<usize>) -> impl Strategy<Value = Hamiltonian> {
    prop::collection::vec((len, 0.1..2.0f64, 0.1..2.0f64, -0.95..0.95f64), cells).prop_map(|cells| {
        let mut breaks = Vec::new();
        let mut out = Vec::new();
        let mut tau = 0.0;
        for (len, h1, h2, r) in cells {
            breaks.push(tau);
            out.push(Cell::Constant(Sym2::new(h1, h2, r * (h1 * h2).sqrt())));
            tau += len;
        }
        Hamiltonian::new(breaks, out, tau).unwrap()
    })
}

fn string() -> impl Strategy<Value = MassDistribution> {
    (
        prop::collection::vec((0.05..1.0f64, 0.2..4.0f64, any::<bool>()), 1..10),
        prop::collection::vec((0.0..1.0f64, 0.01..2.0f64), 0..4),
    )
        .prop_map(|(pieces, atoms)| {
            let n = pieces.len();
            let mut breaks = Vec::new();
            let mut rho = Vec::new();
            let mut x = 0.0;
            for (i, (len, r, gap)) in pieces.into_iter().enumerate() {
                breaks.push(x);
                rho.push(if gap && i > 0 && i + 1 < n { 0.0 } else { r });
                x += len;
            }
            let atoms = atoms.into_iter().map(|(s, m)| Atom { xi: s * x * 0.999, m }).collect();
            MassDistribution::new(breaks, rho, atoms, x).unwrap()
        })
}

fn potential() -> impl Strategy<Value = ScalarPotential> {
    prop::collection::vec((0.1..1.0f64, -2.0..2.0f64), 1..8).prop_map(|cells| {
        let mut breaks = Vec::new();
        let mut values = Vec::new();
        let mut tau = 0.0;
        for (len, v) in cells {
            breaks.push(tau);
            values.push(v);
            tau += len;
        }
        ScalarPotential::piecewise(breaks, values).unwrap()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn entropy_is_nonnegative(mu in line_measure()) {
        prop_assert!(entropy(&mu).unwrap() >= -1e-10);
    }

    #[test]
    fn multiplier_is_unimodular(mu in line_measure(), xs in prop::collection::vec(-20.0..20.0f64, 1..8), eps in 0.0..1.0f64) {
        for s in scattering_multiplier(&mu, &xs, eps).unwrap() {
            prop_assert!((s.norm() - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn log_integral_sentinel(mu in line_measure(), at in -10.0..10.0f64, mass in 0.01..5.0f64, k in 20usize..280) {
        let base = szego_log_integral(&mu).unwrap();
        let mut with_atom = mu.clone();
        with_atom.add_atom(PointMass { x: at, m: mass }).unwrap();
        prop_assert_eq!(szego_log_integral(&with_atom).unwrap(), base);
        let mut density = mu.density().to_vec();
        density[k] = 0.0;
        density[k + 1] = 0.0;
        let gap = SpectralMeasure::new(Support::FullLine, mu.grid().to_vec(), density, vec![], mu.tail()).unwrap();
        prop_assert_eq!(szego_log_integral(&gap).unwrap(), f64::NEG_INFINITY);
    }

    #[test]
    fn canonical_wronskian_at_every_stop(h in hamiltonian(), z in upper(), n in 1usize..12) {
        let stops: Vec<f64> = (1..=n).map(|k| (h.tau_max() * k as f64 / n as f64).min(h.tau_max())).collect();
        for s in integrate_transfer(&h, z, &stops).unwrap() {
            let scale = (s.theta[0].norm() + s.theta[1].norm()) * (s.phi[0].norm() + s.phi[1].norm());
            prop_assert!((s.wronskian() - 1.0).norm() <= 1e-10 * scale.max(1.0));
        }
    }

    #[test]
    fn canonical_terms_are_nonnegative(h in long_hamiltonian(), lam in 0.2..1.5f64) {
        let total = h.eikonal_total();
        let n = (total / lam).floor() as usize;
        prop_assume!(n >= 2);
        let part: Vec<f64> = (0..=n).map(|k| lam * k as f64).collect();
        let r = szego_sum(&h, &part).unwrap();
        for w in r.partial_sums.windows(2) {
            prop_assert!(w[1] >= w[0] - 1e-10);
        }
        for t in r.terms {
            prop_assert!(t >= -1e-10);
        }
    }

    #[test]
    fn sub_intervals_stay_below_the_cover_term(h in long_hamiltonian(), s in 0.0..1.0f64, u in 0.0..1.0f64) {
        let part = default_partition(&h);
        prop_assume!(part.len() >= 3);
        let r = szego_sum_default(&h).unwrap();
        for (n, &eps) in r.terms.iter().enumerate() {
            if eps > 1.0 {
                continue;
            }
            let lo = h.eikonal_inverse(part[n]).unwrap();
            let hi = h.eikonal_inverse(part[n + 2]).unwrap();
            let (a, b) = (lo + s.min(u) * (hi - lo), lo + s.max(u) * (hi - lo));
            let len = h.eikonal(b).unwrap() - h.eikonal(a).unwrap();
            prop_assert!(h.integral(a, b).det() - len * len <= 8.0 * eps + 1e-10);
        }
    }

    #[test]
    fn eikonal_inversion(h in hamiltonian(), f in 0.0..1.0f64) {
        let eta = f * h.eikonal_total();
        let l = h.eikonal_inverse(eta).unwrap();
        prop_assert!((h.eikonal(l).unwrap() - eta).abs() < 1e-10);
        let tau = f * h.tau_max();
        let back = h.eikonal_inverse(h.eikonal(tau).unwrap()).unwrap();
        prop_assert!((back - tau).abs() < 1e-10 * h.tau_max().max(1.0));
    }

    #[test]
    fn weyl_function_is_herglotz(h in hamiltonian(), z in upper()) {
        prop_assert!(weyl_m(&h, z).unwrap().value.im >= 0.0);
    }

    #[test]
    fn bijection_roundtrip(m in string()) {
        let back = hamiltonian_to_string(&string_to_hamiltonian(&m)).unwrap();
        prop_assert!((back.xi_max() - m.xi_max()).abs() < 1e-10 * m.xi_max());
        for k in 0..200 {
            let xi = m.xi_max() * (k as f64 + 0.5) / 200.0;
            prop_assert!((back.rho_at(xi) - m.rho_at(xi)).abs() < 1e-9 * (1.0 + m.rho_at(xi)));
            prop_assert!((back.mass(xi) - m.mass(xi)).abs() < 1e-9 * (1.0 + m.mass(xi)));
        }
        prop_assert_eq!(back.atoms().len(), m.atoms().len());
        for (a, b) in back.atoms().iter().zip(m.atoms()) {
            prop_assert!((a.xi - b.xi).abs() < 1e-9 && (a.m - b.m).abs() < 1e-9);
        }
    }

    #[test]
    fn string_wronskian(m in string(), z in upper(), f in 0.0..1.0f64) {
        let s = string_transfer(&m, f * m.xi_max(), z).unwrap();
        let scale = (s.phi.norm() + s.dphi.norm()) * (s.psi.norm() + s.dpsi.norm());
        prop_assert!((s.wronskian() - 1.0).norm() <= 1e-10 * scale.max(1.0));
    }

    #[test]
    fn eikonals_agree_under_the_bijection(m in string(), f in 0.0..1.0f64) {
        let h = string_to_hamiltonian(&m);
        let xi = f * m.xi_max();
        let tau = xi + m.mass(xi);
        prop_assert!((m.eikonal(xi).unwrap() - h.eikonal(tau).unwrap()).abs() < 1e-10);
    }

    #[test]
    fn string_terms_are_nonnegative(m in string()) {
        let eta = default_eta_grid(&m);
        prop_assume!(eta.len() >= 3);
        for t in string_szego_criterion(&m, &eta).unwrap().terms {
            prop_assert!(t >= -1e-10);
        }
    }

    #[test]
    fn atoms_leave_the_eikonal_and_raise_the_terms(m in string(), s in 0.01..0.99f64, mass in 0.01..2.0f64) {
        let eta = default_eta_grid(&m);
        prop_assume!(eta.len() >= 3);
        let xi = s * m.xi_max();
        let heavier = m.with_atoms(vec![Atom { xi, m: mass }]).unwrap();
        for k in 0..50 {
            let x = m.xi_max() * k as f64 / 50.0;
            prop_assert_eq!(heavier.eikonal(x).unwrap(), m.eikonal(x).unwrap());
        }
        let before = string_szego_criterion(&m, &eta).unwrap().terms;
        let after = string_szego_criterion(&heavier, &eta).unwrap().terms;
        for (n, (a, b)) in after.iter().zip(&before).enumerate() {
            prop_assert!(a >= &(b - 1e-12));
            let (lo, hi) = (m.eikonal_inverse(eta[n]).unwrap(), m.eikonal_inverse(eta[n + 2]).unwrap());
            if lo < xi && xi < hi {
                prop_assert!(a > b);
            }
        }
    }

    #[test]
    fn string_q_is_herglotz(m in string(), z in upper()) {
        prop_assert!(kw_core::string::string_tw_function(&m, z).unwrap().value.im >= 0.0);
    }

    #[test]
    fn n0_is_unimodular(q in potential(), f in prop::collection::vec(0.0..1.0f64, 1..6)) {
        let p = DiracPotential::scalar(Form::Diagonal, q, 12.0).unwrap();
        let mut stops: Vec<f64> = f.iter().map(|x| x * 12.0).collect();
        stops.sort_by(f64::total_cmp);
        for n in transfer_n0(&p, &stops).unwrap() {
            let scale = n[0][0].hypot(n[1][0]) * n[0][1].hypot(n[1][1]);
            prop_assert!((det(&n) - 1.0).abs() < 1e-9 * scale.max(1.0));
        }
    }

    #[test]
    fn dirac_forms_share_terms(q in potential()) {
        let d = dirac_szego_sum(&DiracPotential::scalar(Form::Diagonal, q.clone(), 12.0).unwrap()).unwrap();
        let a = dirac_szego_sum(&DiracPotential::scalar(Form::Antidiagonal, q, 12.0).unwrap()).unwrap();
        prop_assert_eq!(d.terms.len(), a.terms.len());
        for (x, y) in d.terms.iter().zip(&a.terms) {
            prop_assert!((x - y).abs() <= 1e-10 * x.abs().max(1e-6));
        }
    }

    #[test]
    fn dirac_hamiltonian_is_unimodular(q1 in potential(), q2 in potential(), f in 0.0..1.0f64) {
        let h = dirac_hamiltonian(&DiracPotential::general(q1, q2, 9.0).unwrap()).unwrap();
        let tau = f * 9.0;
        let v = h.value_at(tau);
        prop_assert!((v.det() - 1.0).abs() < 1e-9 * v.trace().powi(2).max(1.0));
        prop_assert!((h.eikonal(tau).unwrap() - tau).abs() < 1e-9);
    }

    #[test]
    fn free_dirac_is_unitary(v in prop::collection::vec((-1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64), 1..200), s in -400i64..400) {
        let z1 = v.iter().map(|c| Complex64::new(c.0, c.1)).collect();
        let z2 = v.iter().map(|c| Complex64::new(c.2, c.3)).collect();
        let z = DiracSamples::new(0.01, z1, z2).unwrap();
        let u = free_dirac_evolution(&z, s as f64 * 0.01).unwrap();
        prop_assert!((u.norm_sq() - z.norm_sq()).abs() <= 1e-12 * z.norm_sq().max(1.0));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn leapfrog_front_containment(m in string(), c in 0.3..0.7f64) {
        let h = 0.01;
        let u0 = Bump::new(c * m.xi_max(), 0.1 * m.xi_max()).unwrap();
        let lat = discretize(&m, h, m.xi_max()).unwrap();
        let s0 = lat.initial_state(|x| u0.eval(x));
        let total = lat.norm_sq(&s0);
        prop_assume!(total > 0.0);
        let t = 0.3;
        let steps = (t / lat.max_dt()).ceil() as usize;
        let s = step_leapfrog(&lat, s0, t / steps as f64, steps).unwrap();
        let Some(front) = kw_core::string::wavefront(&m, u0.front(), t).unwrap() else {
            return Ok(());
        };
        prop_assume!(front + 3.0 * h < lat.end());
        prop_assert!(lat.mass_in(&s, front + 3.0 * h, lat.end()) < 1e-3 * total);
    }

    #[test]
    fn leapfrog_is_even_in_time(m in string(), c in 0.3..0.7f64) {
        let lat = discretize(&m, 0.01, m.xi_max()).unwrap();
        let u0 = Bump::new(c * m.xi_max(), 0.1 * m.xi_max()).unwrap();
        let s0 = lat.initial_state(|x| u0.eval(x));
        let dt = lat.max_dt();
        let fwd = step_leapfrog(&lat, s0.clone(), dt, 50).unwrap();
        let bwd = step_leapfrog(&lat, s0, -dt, 50).unwrap();
        let scale = fwd.u.iter().fold(0.0f64, |a, x| a.max(x.abs())).max(1e-300);
        for (a, b) in fwd.u.iter().zip(&bwd.u) {
            prop_assert!((a - b).abs() <= 1e-12 * scale);
        }
    }
}
