//! Closed-form solution of the control-versus-model-error game
//!
//! ```text
//! H(x, p) = max_u min_{d1 ∈ D1} min_{d2 ∈ D2} ⟨p, f̄1 + d1 + (f̄2 + d2) u⟩
//! ```
//!
//! with `U`, `D1`, `D2` axis-aligned boxes containing the origin. For fixed
//! `u` the inner minimum is separable per coordinate; the outer objective is
//! then a sum over control components of concave piecewise-linear functions
//! with a kink at `u_j = 0`, so each `u_j` sits at a box end or at zero.
//!
//! Ties follow the `>= 0` branches: a zero costate component selects the
//! lower disturbance bound, and a control component whose two slopes
//! bracket zero (including equality) is set to 0.

use crate::dynamics::{AffineEval, ControlBox, UncertainModel, UncertaintyBoundsEval};

/// Upper bound on control dimension handled by the allocation-free path.
pub const MAX_CONTROL_DIM: usize = 8;

/// Worst-case additive error: the upper bound where `p_i < 0`, the lower
/// bound otherwise.
pub fn optimal_d1(p: &[f64], d1_lo: &[f64], d1_hi: &[f64]) -> Vec<f64> {
    p.iter()
        .zip(d1_lo.iter().zip(d1_hi))
        .map(|(pi, (lo, hi))| if *pi < 0.0 { *hi } else { *lo })
        .collect()
}

/// Slopes of the inner-min objective in `u_j` for `u_j > 0` and `u_j < 0`:
/// `pᵀ(f̄2j + d2j⁺)` and `pᵀ(f̄2j + d2j⁻)`.
#[inline]
fn column_slopes(p: &[f64], f2: &[f64], d2_lo: &[f64], d2_hi: &[f64], nu: usize, j: usize) -> (f64, f64) {
    let mut pos = 0.0;
    let mut neg = 0.0;
    for (i, &pi) in p.iter().enumerate() {
        let e = i * nu + j;
        let (plus, minus) = if pi < 0.0 {
            (d2_hi[e], d2_lo[e])
        } else {
            (d2_lo[e], d2_hi[e])
        };
        pos += pi * (f2[e] + plus);
        neg += pi * (f2[e] + minus);
    }
    (pos, neg)
}

#[inline]
fn control_component(pos: f64, neg: f64, lo: f64, hi: f64) -> f64 {
    if pos > 0.0 {
        hi
    } else if neg < 0.0 {
        lo
    } else {
        0.0
    }
}

/// Maximizing control given the costate `p`, nominal input matrix `f2bar`
/// (row-major `nx × nu`) and its error bounds.
pub fn optimal_control(
    p: &[f64],
    f2bar: &[f64],
    d2_lo: &[f64],
    d2_hi: &[f64],
    controls: &ControlBox,
) -> Vec<f64> {
    let nu = controls.dim();
    (0..nu)
        .map(|j| {
            let (pos, neg) = column_slopes(p, f2bar, d2_lo, d2_hi, nu, j);
            control_component(pos, neg, controls.lo()[j], controls.hi()[j])
        })
        .collect()
}

/// Worst-case input-matrix error at the chosen control: entry `(i, j)` takes
/// the upper bound where `u_j p_i < 0`, the lower bound otherwise.
pub fn optimal_d2(p: &[f64], u_star: &[f64], d2_lo: &[f64], d2_hi: &[f64]) -> Vec<f64> {
    let nu = u_star.len();
    (0..p.len() * nu)
        .map(|e| {
            if u_star[e % nu] * p[e / nu] < 0.0 {
                d2_hi[e]
            } else {
                d2_lo[e]
            }
        })
        .collect()
}

/// Inputs of one Hamiltonian evaluation.
#[derive(Debug, Clone, Copy)]
pub struct GamePoint<'a> {
    pub p: &'a [f64],
    pub nominal: &'a AffineEval,
    pub bounds: &'a UncertaintyBoundsEval,
    pub controls: &'a ControlBox,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GameSolution {
    pub u_star: Vec<f64>,
    pub d1_star: Vec<f64>,
    pub d2_star: Vec<f64>,
    pub h_value: f64,
}

/// `⟨p, f̄1 + d1 + (f̄2 + d2) u⟩`.
#[inline]
fn assemble(p: &[f64], nominal: &AffineEval, d1: impl Fn(usize) -> f64, d2: impl Fn(usize) -> f64, u: &[f64]) -> f64 {
    let nu = u.len();
    let mut h = 0.0;
    for (i, &pi) in p.iter().enumerate() {
        let mut xdot = nominal.f1[i] + d1(i);
        for (j, &uj) in u.iter().enumerate() {
            let e = i * nu + j;
            xdot += (nominal.f2[e] + d2(e)) * uj;
        }
        h += pi * xdot;
    }
    h
}

pub fn solve_game(point: &GamePoint<'_>) -> GameSolution {
    let GamePoint {
        p,
        nominal,
        bounds,
        controls,
    } = *point;
    let d1_star = optimal_d1(p, &bounds.d1_lo, &bounds.d1_hi);
    let u_star = optimal_control(p, &nominal.f2, &bounds.d2_lo, &bounds.d2_hi, controls);
    let d2_star = optimal_d2(p, &u_star, &bounds.d2_lo, &bounds.d2_hi);
    let h_value = assemble(p, nominal, |i| d1_star[i], |e| d2_star[e], &u_star);
    GameSolution {
        u_star,
        d1_star,
        d2_star,
        h_value,
    }
}

/// Allocation-free Hamiltonian value; bit-identical to
/// `solve_game(..).h_value`.
pub fn hamiltonian(
    p: &[f64],
    nominal: &AffineEval,
    bounds: &UncertaintyBoundsEval,
    controls: &ControlBox,
) -> f64 {
    let nu = controls.dim();
    assert!(nu <= MAX_CONTROL_DIM, "control dimension {nu} exceeds {MAX_CONTROL_DIM}");
    let mut u = [0.0; MAX_CONTROL_DIM];
    for (j, uj) in u.iter_mut().enumerate().take(nu) {
        let (pos, neg) = column_slopes(p, &nominal.f2, &bounds.d2_lo, &bounds.d2_hi, nu, j);
        *uj = control_component(pos, neg, controls.lo()[j], controls.hi()[j]);
    }
    let u = &u[..nu];
    assemble(
        p,
        nominal,
        |i| {
            if p[i] < 0.0 {
                bounds.d1_hi[i]
            } else {
                bounds.d1_lo[i]
            }
        },
        |e| {
            if u[e % nu] * p[e / nu] < 0.0 {
                bounds.d2_hi[e]
            } else {
                bounds.d2_lo[e]
            }
        },
        u,
    )
}

/// Replaces the control-coupled error `d2 u` by a control-independent error
/// `d3 ∈ [-a, a]` with `a_i = Σ_j max|u_j| · max|d2_ij|`, folded into the
/// additive channel. `D2` becomes `{0}`.
pub fn partial_game_bounds(bounds: &UncertaintyBoundsEval, controls: &ControlBox) -> UncertaintyBoundsEval {
    let nu = controls.dim();
    let nx = bounds.nx();
    let mut out = UncertaintyBoundsEval::zeros(nx, nu);
    // Rounded outward at every operation so the folded box encloses the
    // exact one and the game stays at least as conservative as the full one.
    let up = |v: f64| if v == 0.0 { v } else { v.next_up() };
    for i in 0..nx {
        let a = (0..nu).fold(0.0f64, |acc, j| {
            let e = i * nu + j;
            up(acc + up(controls.max_abs(j) * bounds.d2_lo[e].abs().max(bounds.d2_hi[e].abs())))
        });
        if a == 0.0 {
            out.d1_lo[i] = bounds.d1_lo[i];
            out.d1_hi[i] = bounds.d1_hi[i];
        } else {
            out.d1_lo[i] = (bounds.d1_lo[i] - a).next_down();
            out.d1_hi[i] = (bounds.d1_hi[i] + a).next_up();
        }
    }
    out
}

/// Per-dimension bound on `|∂H/∂p_i|` over all admissible `(u, d1, d2)`:
/// `|f̄1i| + max|d1i| + Σ_j (|f̄2ij| + max|d2ij|) · max|u_j|`.
pub fn dissipation_bounds(nominal: &AffineEval, bounds: &UncertaintyBoundsEval, controls: &ControlBox) -> Vec<f64> {
    let nu = controls.dim();
    (0..nominal.nx())
        .map(|i| {
            let mut a = nominal.f1[i].abs() + bounds.d1_lo[i].abs().max(bounds.d1_hi[i].abs());
            for j in 0..nu {
                let e = i * nu + j;
                a += (nominal.f2[e].abs() + bounds.d2_lo[e].abs().max(bounds.d2_hi[e].abs())) * controls.max_abs(j);
            }
            a
        })
        .collect()
}

/// Uncertain model whose bounds are replaced by their partial-game widening.
#[derive(Debug, Clone)]
pub struct PartialGame<M> {
    inner: M,
}

impl<M: UncertainModel> PartialGame<M> {
    pub fn new(inner: M) -> Self {
        Self { inner }
    }
}

impl<M: UncertainModel> UncertainModel for PartialGame<M> {
    fn state_dim(&self) -> usize {
        self.inner.state_dim()
    }
    fn control_dim(&self) -> usize {
        self.inner.control_dim()
    }
    fn control_box(&self) -> &ControlBox {
        self.inner.control_box()
    }
    fn nominal(&self, x: &[f64]) -> AffineEval {
        self.inner.nominal(x)
    }
    fn bounds(&self, x: &[f64]) -> UncertaintyBoundsEval {
        partial_game_bounds(&self.inner.bounds(x), self.inner.control_box())
    }
    fn evaluate(&self, x: &[f64]) -> (AffineEval, UncertaintyBoundsEval) {
        let (n, b) = self.inner.evaluate(x);
        (n, partial_game_bounds(&b, self.inner.control_box()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sym(r: f64, n: usize) -> (Vec<f64>, Vec<f64>) {
        (vec![-r; n], vec![r; n])
    }

    /// Inner minimum by enumerating every vertex of D1 and of D2.
    fn inner_min_vertices(p: &[f64], nom: &AffineEval, b: &UncertaintyBoundsEval, u: &[f64]) -> f64 {
        let nx = p.len();
        let nu = u.len();
        let base: f64 = (0..nx)
            .map(|i| p[i] * (nom.f1[i] + (0..nu).map(|j| nom.f2(i, j) * u[j]).sum::<f64>()))
            .sum();
        let mut m1 = f64::INFINITY;
        for mask in 0..(1usize << nx) {
            let v: f64 = (0..nx)
                .map(|i| p[i] * if mask >> i & 1 == 1 { b.d1_hi[i] } else { b.d1_lo[i] })
                .sum();
            m1 = m1.min(v);
        }
        let ne = nx * nu;
        let mut m2 = f64::INFINITY;
        for mask in 0..(1usize << ne) {
            let v: f64 = (0..ne)
                .map(|e| {
                    let d = if mask >> e & 1 == 1 { b.d2_hi[e] } else { b.d2_lo[e] };
                    p[e / nu] * d * u[e % nu]
                })
                .sum();
            m2 = m2.min(v);
        }
        base + m1 + m2
    }

    fn random_point(rng: &mut ChaCha8Rng, nx: usize, nu: usize) -> (Vec<f64>, AffineEval, UncertaintyBoundsEval, ControlBox) {
        let p = (0..nx).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let nom = AffineEval::new(
            (0..nx).map(|_| rng.gen_range(-2.0..2.0)).collect(),
            (0..nx * nu).map(|_| rng.gen_range(-2.0..2.0)).collect(),
            nu,
        );
        let b = UncertaintyBoundsEval {
            d1_lo: (0..nx).map(|_| -rng.gen_range(0.0..1.0)).collect(),
            d1_hi: (0..nx).map(|_| rng.gen_range(0.0..1.0)).collect(),
            d2_lo: (0..nx * nu).map(|_| -rng.gen_range(0.0..1.0)).collect(),
            d2_hi: (0..nx * nu).map(|_| rng.gen_range(0.0..1.0)).collect(),
            nu,
        };
        let cb = ControlBox::new(
            (0..nu).map(|_| -rng.gen_range(0.1..2.0)).collect(),
            (0..nu).map(|_| rng.gen_range(0.1..2.0)).collect(),
        )
        .unwrap();
        (p, nom, b, cb)
    }

    #[test]
    fn d1_sign_rule() {
        let (lo, hi) = sym(0.2, 2);
        assert_eq!(optimal_d1(&[1.0, -1.0], &lo, &hi), vec![-0.2, 0.2]);
        assert_eq!(optimal_d1(&[0.0, 0.0], &lo, &hi), lo);
    }

    #[test]
    fn d1_matches_vertex_minimum() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            let p: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let lo: Vec<f64> = (0..3).map(|_| -rng.gen_range(0.0..1.0)).collect();
            let hi: Vec<f64> = (0..3).map(|_| rng.gen_range(0.0..2.0)).collect();
            let d = optimal_d1(&p, &lo, &hi);
            let got: f64 = p.iter().zip(&d).map(|(a, b)| a * b).sum();
            let best = (0..8)
                .map(|m: usize| (0..3).map(|i| p[i] * if m >> i & 1 == 1 { hi[i] } else { lo[i] }).sum::<f64>())
                .fold(f64::INFINITY, f64::min);
            assert!((got - best).abs() < 1e-12);
        }
    }

    #[test]
    fn control_branch_examples() {
        let cb = ControlBox::symmetric(&[1.0]).unwrap();
        let (lo, hi) = sym(0.5, 2);
        assert_eq!(optimal_control(&[0.0, 1.0], &[0.0, 2.0], &lo, &hi, &cb), vec![1.0]);
        // Uncertainty dominates the control authority.
        assert_eq!(optimal_control(&[0.0, 1.0], &[0.0, 0.3], &lo, &hi, &cb), vec![0.0]);
        assert_eq!(optimal_control(&[0.0, 1.0], &[0.0, -2.0], &lo, &hi, &cb), vec![-1.0]);
    }

    #[test]
    fn d2_sign_rule() {
        let (lo, hi) = sym(0.5, 2);
        assert_eq!(optimal_d2(&[-1.0, 1.0], &[1.0], &lo, &hi), vec![0.5, -0.5]);
        assert_eq!(optimal_d2(&[-1.0, 1.0], &[0.0], &lo, &hi), lo);
    }

    #[test]
    fn degenerate_games() {
        let cb = ControlBox::symmetric(&[1.0]).unwrap();
        let nom = AffineEval::new(vec![0.5, -1.0], vec![0.0, 2.0], 1);
        let zero = UncertaintyBoundsEval::zeros(2, 1);
        let sol = solve_game(&GamePoint {
            p: &[0.3, 0.7],
            nominal: &nom,
            bounds: &zero,
            controls: &cb,
        });
        assert_eq!(sol.u_star, vec![1.0]);
        assert!((sol.h_value - (0.3 * 0.5 - 0.7 + 0.7 * 2.0)).abs() < 1e-15);

        let wide = UncertaintyBoundsEval::symmetric(&[3.0, 3.0], &[3.0, 3.0], 1);
        let sol = solve_game(&GamePoint {
            p: &[0.0, 0.0],
            nominal: &nom,
            bounds: &wide,
            controls: &cb,
        });
        assert_eq!(sol.h_value, 0.0);
    }

    #[test]
    fn closed_form_matches_vertex_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for t in 0..500 {
            let (nx, nu) = (2 + t % 3, 1 + t % 2);
            let (p, nom, b, cb) = random_point(&mut rng, nx, nu);
            let point = GamePoint {
                p: &p,
                nominal: &nom,
                bounds: &b,
                controls: &cb,
            };
            let sol = solve_game(&point);
            assert!(cb.contains(&sol.u_star));
            // Adversary optimal at u*.
            let inner = inner_min_vertices(&p, &nom, &b, &sol.u_star);
            assert!((inner - sol.h_value).abs() < 1e-9);
            // No control on a coarse grid does better.
            let steps = 11usize;
            for idx in 0..steps.pow(nu as u32) {
                let u: Vec<f64> = (0..nu)
                    .map(|j| {
                        let k = idx / steps.pow(j as u32) % steps;
                        cb.lo()[j] + (cb.hi()[j] - cb.lo()[j]) * k as f64 / (steps - 1) as f64
                    })
                    .collect();
                assert!(inner_min_vertices(&p, &nom, &b, &u) <= sol.h_value + 1e-9);
            }
            assert_eq!(hamiltonian(&p, &nom, &b, &cb).to_bits(), sol.h_value.to_bits());
        }
    }

    #[test]
    fn partial_game_examples() {
        let cb = ControlBox::symmetric(&[1.0]).unwrap();
        let b = UncertaintyBoundsEval::symmetric(&[0.1, 0.2], &[0.5, 0.5], 1);
        let w = partial_game_bounds(&b, &cb);
        for (got, want) in w.d1_hi.iter().zip([0.6, 0.7]) {
            assert!(*got >= want && *got - want < 1e-15);
        }
        for (got, want) in w.d1_lo.iter().zip([-0.6, -0.7]) {
            assert!(*got <= want && want - *got < 1e-15);
        }
        assert!(w.d2_lo.iter().chain(&w.d2_hi).all(|v| *v == 0.0));

        let b0 = UncertaintyBoundsEval::symmetric(&[0.1, 0.2], &[0.0, 0.0], 1);
        assert_eq!(partial_game_bounds(&b0, &cb), b0);
    }

    #[test]
    fn partial_game_never_exceeds_full_game() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for t in 0..2000 {
            let (p, nom, b, cb) = random_point(&mut rng, 2 + t % 3, 1 + t % 2);
            let full = hamiltonian(&p, &nom, &b, &cb);
            let partial = hamiltonian(&p, &nom, &partial_game_bounds(&b, &cb), &cb);
            assert!(partial <= full + 1e-12);
            let w = partial_game_bounds(&b, &cb);
            assert!(w.d1_lo.iter().zip(&b.d1_lo).all(|(w, b)| w <= b));
        }
    }

    #[test]
    fn dissipation_examples() {
        let cb = ControlBox::symmetric(&[1.0]).unwrap();
        let nom = AffineEval::new(vec![1.0, -2.0], vec![0.0, 3.0], 1);
        let a = dissipation_bounds(&nom, &UncertaintyBoundsEval::zeros(2, 1), &cb);
        assert_eq!(a, vec![1.0, 5.0]);
    }

    #[test]
    fn dissipation_bounds_dynamics() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let (_, nom, b, cb) = random_point(&mut rng, 3, 2);
            let a = dissipation_bounds(&nom, &b, &cb);
            for _ in 0..10 {
                let u: Vec<f64> = (0..2).map(|j| rng.gen_range(cb.lo()[j]..=cb.hi()[j])).collect();
                for i in 0..3 {
                    let mut f = nom.f1[i] + rng.gen_range(b.d1_lo[i]..=b.d1_hi[i]);
                    for j in 0..2 {
                        let e = i * 2 + j;
                        f += (nom.f2[e] + rng.gen_range(b.d2_lo[e]..=b.d2_hi[e])) * u[j];
                    }
                    assert!(f.abs() <= a[i] + 1e-12);
                }
            }
        }
    }

    #[test]
    fn homogeneous_in_costate() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let (p, nom, b, cb) = random_point(&mut rng, 3, 2);
            let s = rng.gen_range(0.1..10.0);
            let ps: Vec<f64> = p.iter().map(|v| v * s).collect();
            let a = solve_game(&GamePoint { p: &p, nominal: &nom, bounds: &b, controls: &cb });
            let c = solve_game(&GamePoint { p: &ps, nominal: &nom, bounds: &b, controls: &cb });
            assert_eq!(a.u_star, c.u_star);
            assert!((c.h_value - s * a.h_value).abs() < 1e-9 * (1.0 + c.h_value.abs()));
        }
    }

    #[test]
    fn larger_bounds_never_increase_h() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..500 {
            let (p, nom, b, cb) = random_point(&mut rng, 3, 1);
            let mut wide = b.clone();
            for v in wide.d1_lo.iter_mut().chain(wide.d2_lo.iter_mut()) {
                *v -= rng.gen_range(0.0..0.5);
            }
            for v in wide.d1_hi.iter_mut().chain(wide.d2_hi.iter_mut()) {
                *v += rng.gen_range(0.0..0.5);
            }
            assert!(hamiltonian(&p, &nom, &wide, &cb) <= hamiltonian(&p, &nom, &b, &cb) + 1e-12);
        }
    }
}
