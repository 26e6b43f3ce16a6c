//! Deliberately naive reference implementations.

/// Row-major boolean grid.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Grid {
    pub width: usize,
    pub height: usize,
    pub cells: Vec<bool>,
}

impl Grid {
    fn at(&self, r: isize, c: isize) -> Option<bool> {
        if r < 0 || c < 0 || r >= self.height as isize || c >= self.width as isize {
            None
        } else {
            Some(self.cells[r as usize * self.width + c as usize])
        }
    }
}

fn fill(g: &Grid, seen: &mut [bool], r: isize, c: isize, value: bool, eight: bool, touches: &mut bool) {
    match g.at(r, c) {
        Some(v) if v == value => {}
        _ => return,
    }
    let i = r as usize * g.width + c as usize;
    if seen[i] {
        return;
    }
    seen[i] = true;
    if r == 0 || c == 0 || r as usize == g.height - 1 || c as usize == g.width - 1 {
        *touches = true;
    }
    for dr in -1..=1isize {
        for dc in -1..=1isize {
            if (dr, dc) == (0, 0) || (!eight && dr != 0 && dc != 0) {
                continue;
            }
            fill(g, seen, r + dr, c + dc, value, eight, touches);
        }
    }
}

/// Returns the number of regions of `value` pixels and how many of them touch
/// the image border.
fn regions(g: &Grid, value: bool, eight: bool) -> (usize, usize) {
    let mut seen = vec![false; g.cells.len()];
    let (mut n, mut border) = (0, 0);
    for r in 0..g.height {
        for c in 0..g.width {
            let i = r * g.width + c;
            if g.cells[i] == value && !seen[i] {
                let mut touches = false;
                fill(g, &mut seen, r as isize, c as isize, value, eight, &mut touches);
                n += 1;
                border += touches as usize;
            }
        }
    }
    (n, border)
}

/// 8-connected foreground components.
pub fn components(g: &Grid) -> usize {
    regions(g, true, true).0
}

/// 4-connected background regions not touching the border.
pub fn holes(g: &Grid) -> usize {
    let (n, border) = regions(g, false, false);
    n - border
}

pub fn euler(g: &Grid) -> i64 {
    components(g) as i64 - holes(g) as i64
}

/// Solves the soft-margin SVM dual
/// `max Σa − ½ aᵀQa  s.t. 0 ≤ a ≤ C, yᵀa = 0` with `Q_ij = y_i y_j K_ij`
/// by accelerated projected gradient. Returns `(a, objective)`.
pub fn svm_dual_qp(k: &[Vec<f64>], y: &[f64], c: f64, iterations: usize) -> (Vec<f64>, f64) {
    let n = y.len();
    let q: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| y[i] * y[j] * k[i][j]).collect()).collect();
    // Gershgorin bound on the largest eigenvalue.
    let lip = q
        .iter()
        .map(|row| row.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
        .max(1e-12);
    let step = 1.0 / lip;
    let grad = |a: &[f64]| -> Vec<f64> { (0..n).map(|i| 1.0 - dot(&q[i], a)).collect() };
    let mut a = vec![0.0; n];
    let mut z = a.clone();
    let mut t = 1.0f64;
    for _ in 0..iterations {
        let g = grad(&z);
        let v: Vec<f64> = z.iter().zip(&g).map(|(zi, gi)| zi + step * gi).collect();
        let next = project(&v, y, c);
        let t_next = (1.0 + (1.0 + 4.0 * t * t).sqrt()) / 2.0;
        let m = (t - 1.0) / t_next;
        z = next.iter().zip(&a).map(|(n, o)| n + m * (n - o)).collect();
        // Restart momentum when the objective drops.
        if objective(&q, &next) < objective(&q, &a) {
            z = next.clone();
            t = 1.0;
        } else {
            t = t_next;
        }
        a = next;
    }
    let obj = objective(&q, &a);
    (a, obj)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn objective(q: &[Vec<f64>], a: &[f64]) -> f64 {
    let quad: f64 = q.iter().zip(a).map(|(row, ai)| ai * dot(row, a)).sum();
    a.iter().sum::<f64>() - 0.5 * quad
}

/// Euclidean projection onto `{0 ≤ a ≤ C, yᵀa = 0}`: `a = clip(v − λy)` with
/// `λ` found by bisection.
fn project(v: &[f64], y: &[f64], c: f64) -> Vec<f64> {
    let at = |lambda: f64| -> Vec<f64> { v.iter().zip(y).map(|(vi, yi)| (vi - lambda * yi).clamp(0.0, c)).collect() };
    let h = |lambda: f64| dot(&at(lambda), y);
    let span = v.iter().map(|x| x.abs()).fold(0.0, f64::max) + c + 1.0;
    let (mut lo, mut hi) = (-span, span);
    // h is non-increasing in lambda.
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if h(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    at(0.5 * (lo + hi))
}

/// Largest KKT violation of `a` for the problem above, measured on the
/// margins `y_i f(x_i)` with the supplied bias.
pub fn kkt_residual(k: &[Vec<f64>], y: &[f64], a: &[f64], bias: f64, c: f64) -> f64 {
    let n = y.len();
    let bound = 1e-8 * c.max(1.0);
    let mut worst: f64 = 0.0;
    for i in 0..n {
        let f: f64 = (0..n).map(|j| a[j] * y[j] * k[i][j]).sum::<f64>() + bias;
        let m = y[i] * f;
        let v = if a[i] <= bound {
            (1.0 - m).max(0.0)
        } else if a[i] >= c - bound {
            (m - 1.0).max(0.0)
        } else {
            (m - 1.0).abs()
        };
        worst = worst.max(v);
    }
    worst.max(dot(a, y).abs())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(rows: &[&str]) -> Grid {
        Grid {
            width: rows[0].len(),
            height: rows.len(),
            cells: rows.iter().flat_map(|r| r.chars().map(|ch| ch == '#')).collect(),
        }
    }

    #[test]
    fn ring_and_diagonal() {
        let g = grid(&["#####", "#...#", "#.#.#", "#...#", "#####"]);
        assert_eq!((components(&g), holes(&g), euler(&g)), (2, 1, 1));
        let d = grid(&["#..", ".#.", "..#"]);
        assert_eq!((components(&d), holes(&d)), (1, 0));
        // A background pixel that reaches the border only diagonally is a hole.
        let h = grid(&["###.", "#.#.", "##.."]);
        assert_eq!((components(&h), holes(&h)), (1, 1));
    }

    #[test]
    fn qp_two_points() {
        // Two points, kernel value e: a* = 2/(2 − 2e) when below C.
        let e = (-1.0f64).exp();
        let k = vec![vec![1.0, e], vec![e, 1.0]];
        let (a, obj) = svm_dual_qp(&k, &[1.0, -1.0], 100.0, 2000);
        let star = 1.0 / (1.0 - e);
        assert!((a[0] - star).abs() < 1e-6 && (a[1] - star).abs() < 1e-6);
        assert!((obj - star).abs() < 1e-6);
    }
}
