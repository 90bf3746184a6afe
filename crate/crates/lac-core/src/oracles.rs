//! Independent test oracles, enabled by the `test-oracles` feature and used
//! only from test targets. The dense QP route here deliberately shares no
//! code with the closed-form action formula it cross-checks: states are
//! eliminated explicitly and the normal equations are solved directly.

use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

/// Minimize the finite-horizon quadratic
/// `sum_{j=0}^{L-1} (x_j' Q x_j + u_j' R u_j) + x_L' P_term x_L`
/// subject to `x_{j+1} = A x_j + B u_j + phi_j`, by stacking
/// `X = G U + d` and solving the normal equations. Returns all controls.
pub fn dense_receding_qp(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    p_term: &DMatrix<f64>,
    x0: &DVector<f64>,
    params: &[DVector<f64>],
) -> Vec<DVector<f64>> {
    let n = a.nrows();
    let m = b.ncols();
    let steps = params.len();
    assert!(steps >= 1);

    // Powers of A up to steps.
    let mut powers = Vec::with_capacity(steps + 1);
    powers.push(DMatrix::<f64>::identity(n, n));
    for j in 1..=steps {
        let next = &powers[j - 1] * a;
        powers.push(next);
    }

    // X = G U + d with X = [x_1; ...; x_L].
    let mut g = DMatrix::<f64>::zeros(steps * n, steps * m);
    let mut d = DVector::<f64>::zeros(steps * n);
    for j in 1..=steps {
        let row = (j - 1) * n;
        let mut dj = &powers[j] * x0;
        for i in 0..j {
            let block = &powers[j - 1 - i] * b;
            g.view_mut((row, i * m), (n, m)).copy_from(&block);
            dj += &powers[j - 1 - i] * &params[i];
        }
        d.rows_mut(row, n).copy_from(&dj);
    }

    // Block-diagonal state weight: Q for x_1..x_{L-1}, terminal for x_L.
    let mut q_bar = DMatrix::<f64>::zeros(steps * n, steps * n);
    for j in 1..steps {
        q_bar
            .view_mut(((j - 1) * n, (j - 1) * n), (n, n))
            .copy_from(q);
    }
    q_bar
        .view_mut(((steps - 1) * n, (steps - 1) * n), (n, n))
        .copy_from(p_term);
    let mut r_bar = DMatrix::<f64>::zeros(steps * m, steps * m);
    for j in 0..steps {
        r_bar.view_mut((j * m, j * m), (m, m)).copy_from(r);
    }

    let gt_q = g.transpose() * &q_bar;
    let hess = &gt_q * &g + r_bar;
    let rhs = -(&gt_q * &d);
    let u = hess.lu().solve(&rhs).expect("QP normal equations solvable");
    (0..steps).map(|j| u.rows(j * m, m).into_owned()).collect()
}

/// The same quadratic program solved through its KKT system with states
/// kept as variables. Much better conditioned than the eliminated form on
/// long horizons; used for full-horizon cross-checks.
pub fn kkt_full_horizon(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    p_term: &DMatrix<f64>,
    x0: &DVector<f64>,
    params: &[DVector<f64>],
) -> Vec<DVector<f64>> {
    let n = a.nrows();
    let m = b.ncols();
    let steps = params.len();
    let xs = steps * n; // states x_1..x_L
    let us = steps * m;
    let dim = xs + us + xs; // states, controls, multipliers

    let mut kkt = DMatrix::<f64>::zeros(dim, dim);
    let mut rhs = DVector::<f64>::zeros(dim);

    // Stationarity in X: 2 Qbar X + E' nu = 0.
    for j in 0..steps {
        let w = if j + 1 == steps { p_term } else { q };
        kkt.view_mut((j * n, j * n), (n, n)).copy_from(&(w * 2.0));
        // E[j][j] = I contributes I' into row block j.
        kkt.view_mut((j * n, xs + us + j * n), (n, n))
            .copy_from(&DMatrix::identity(n, n));
        // E[j+1][j] = -A contributes -A' into row block j.
        if j + 1 < steps {
            kkt.view_mut((j * n, xs + us + (j + 1) * n), (n, n))
                .copy_from(&(-a.transpose()));
        }
    }
    // Stationarity in U: 2 Rbar U + F' nu = 0 with F = -blkdiag(B).
    for j in 0..steps {
        kkt.view_mut((xs + j * m, xs + j * m), (m, m))
            .copy_from(&(r * 2.0));
        kkt.view_mut((xs + j * m, xs + us + j * n), (m, n))
            .copy_from(&(-b.transpose()));
    }
    // Constraints: x_{j+1} - A x_j - B u_j = phi_j (+ A x0 for j = 0).
    for j in 0..steps {
        let row = xs + us + j * n;
        kkt.view_mut((row, j * n), (n, n))
            .copy_from(&DMatrix::identity(n, n));
        if j >= 1 {
            kkt.view_mut((row, (j - 1) * n), (n, n)).copy_from(&(-a));
        }
        kkt.view_mut((row, xs + j * m), (n, m)).copy_from(&(-b));
        let mut dj = params[j].clone();
        if j == 0 {
            dj += a * x0;
        }
        rhs.rows_mut(row, n).copy_from(&dj);
    }

    let sol = kkt.lu().solve(&rhs).expect("KKT system solvable");
    (0..steps)
        .map(|j| sol.rows(xs + j * m, m).into_owned())
        .collect()
}

/// Objective value of a control sequence under the same quadratic problem.
pub fn dense_objective(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    p_term: &DMatrix<f64>,
    x0: &DVector<f64>,
    params: &[DVector<f64>],
    controls: &[DVector<f64>],
) -> f64 {
    let mut x = x0.clone();
    let mut j = 0.0;
    for (u, phi) in controls.iter().zip(params) {
        j += (x.transpose() * q * &x)[(0, 0)] + (u.transpose() * r * u)[(0, 0)];
        x = a * &x + b * u + phi;
    }
    j + (x.transpose() * p_term * &x)[(0, 0)]
}
