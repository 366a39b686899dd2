//! Small derivative-free optimizers: golden-section line search and a
//! two-parameter Nelder-Mead simplex.

/// Inverse golden ratio.
const INV_PHI: f64 = 0.618_033_988_749_894_9;

/// Maximize a unimodal function on [a, b] by golden-section search,
/// stopping when the bracket is narrower than `tol`.
pub(crate) fn golden_section_max<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: f64) -> (f64, f64) {
    let (mut lo, mut hi) = (a, b);
    let mut x1 = hi - INV_PHI * (hi - lo);
    let mut x2 = lo + INV_PHI * (hi - lo);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    while hi - lo > tol {
        if f1 < f2 {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + INV_PHI * (hi - lo);
            f2 = f(x2);
        } else {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - INV_PHI * (hi - lo);
            f1 = f(x1);
        }
    }
    let mid = 0.5 * (lo + hi);
    (mid, f(mid))
}

/// Outcome of a simplex descent.
#[derive(Debug, Clone, Copy)]
pub(crate) struct SimplexOutcome {
    pub x: [f64; 2],
    pub value: f64,
    #[allow(dead_code)] // consumed by tests; estimators key off the value
    pub converged: bool,
}

const REFLECTION: f64 = 1.0;
const EXPANSION: f64 = 2.0;
const CONTRACTION: f64 = 0.5;
const SHRINK: f64 = 0.5;

/// Minimize a two-parameter function with the Nelder-Mead simplex,
/// terminating when the simplex diameter drops below `diameter_tol`.
pub(crate) fn nelder_mead_2d<F: Fn(&[f64; 2]) -> f64>(
    f: F,
    start: [f64; 2],
    scale: f64,
    diameter_tol: f64,
    max_iter: usize,
) -> SimplexOutcome {
    let mut simplex = [
        start,
        [start[0] + scale, start[1]],
        [start[0], start[1] + scale],
    ];
    let mut values = [f(&simplex[0]), f(&simplex[1]), f(&simplex[2])];

    let mut converged = false;
    for _ in 0..max_iter {
        // Order best -> worst.
        let mut order = [0usize, 1, 2];
        order.sort_by(|&i, &j| values[i].total_cmp(&values[j]));
        let (best, mid, worst) = (order[0], order[1], order[2]);

        if diameter(&simplex) < diameter_tol {
            converged = true;
            break;
        }

        let centroid = [
            0.5 * (simplex[best][0] + simplex[mid][0]),
            0.5 * (simplex[best][1] + simplex[mid][1]),
        ];
        let reflect = step(&centroid, &simplex[worst], REFLECTION);
        let f_reflect = f(&reflect);

        if f_reflect < values[best] {
            let expand = step(&centroid, &simplex[worst], EXPANSION);
            let f_expand = f(&expand);
            if f_expand < f_reflect {
                simplex[worst] = expand;
                values[worst] = f_expand;
            } else {
                simplex[worst] = reflect;
                values[worst] = f_reflect;
            }
        } else if f_reflect < values[mid] {
            simplex[worst] = reflect;
            values[worst] = f_reflect;
        } else {
            let contract = if f_reflect < values[worst] {
                step(&centroid, &simplex[worst], CONTRACTION)
            } else {
                step(&centroid, &simplex[worst], -CONTRACTION)
            };
            let f_contract = f(&contract);
            if f_contract < values[worst].min(f_reflect) {
                simplex[worst] = contract;
                values[worst] = f_contract;
            } else {
                // Shrink toward the best vertex.
                for i in [mid, worst] {
                    simplex[i] = [
                        simplex[best][0] + SHRINK * (simplex[i][0] - simplex[best][0]),
                        simplex[best][1] + SHRINK * (simplex[i][1] - simplex[best][1]),
                    ];
                    values[i] = f(&simplex[i]);
                }
            }
        }
    }

    let mut best = 0;
    for i in 1..3 {
        if values[i] < values[best] {
            best = i;
        }
    }
    SimplexOutcome {
        x: simplex[best],
        value: values[best],
        converged,
    }
}

fn step(centroid: &[f64; 2], vertex: &[f64; 2], coeff: f64) -> [f64; 2] {
    [
        centroid[0] + coeff * (centroid[0] - vertex[0]),
        centroid[1] + coeff * (centroid[1] - vertex[1]),
    ]
}

fn diameter(simplex: &[[f64; 2]; 3]) -> f64 {
    let mut d: f64 = 0.0;
    for i in 0..3 {
        for j in (i + 1)..3 {
            let dx = simplex[i][0] - simplex[j][0];
            let dy = simplex[i][1] - simplex[j][1];
            d = d.max((dx * dx + dy * dy).sqrt());
        }
    }
    d
}
