//! Quadrature on the reference triangle `{(x, y) : x, y >= 0, x + y <= 1}` and on `[0, 1]`.

/// Points and weights; triangle weights sum to the reference area 1/2,
/// interval weights sum to 1.
#[derive(Debug, Clone)]
pub struct QuadratureRule<const D: usize> {
    pub points: Vec<[f64; D]>,
    pub weights: Vec<f64>,
    /// Highest total polynomial degree integrated exactly.
    pub degree: usize,
}

pub type TriangleRule = QuadratureRule<2>;
pub type IntervalRule = QuadratureRule<1>;

impl<const D: usize> QuadratureRule<D> {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&[f64; D], f64)> + '_ {
        self.points.iter().zip(self.weights.iter().copied())
    }
}

impl TriangleRule {
    /// Symmetric 12-point rule of degree 6.
    pub fn dunavant6() -> Self {
        let mut points = Vec::with_capacity(12);
        let mut weights = Vec::with_capacity(12);
        let mut orbit3 = |a: f64, b: f64, w: f64| {
            for l in [[a, b, b], [b, a, b], [b, b, a]] {
                points.push([l[1], l[2]]);
                weights.push(0.5 * w);
            }
        };
        orbit3(0.501426509658179, 0.249286745170910, 0.116786275726379);
        orbit3(0.873821971016996, 0.063089014491502, 0.050844906370207);
        let (a, b, c, w) = (0.053145049844817, 0.310352451033784, 0.636502499121399, 0.082851075618374);
        for l in [[a, b, c], [a, c, b], [b, a, c], [b, c, a], [c, a, b], [c, b, a]] {
            points.push([l[1], l[2]]);
            weights.push(0.5 * w);
        }
        TriangleRule {
            points,
            weights,
            degree: 6,
        }
    }

    /// Collapsed (Duffy) tensor Gauss rule exact for total degree `degree`.
    pub fn conical(degree: usize) -> Self {
        // x = u, y = v (1 - u), Jacobian (1 - u): the u-degree grows by one.
        let gu = IntervalRule::gauss_legendre((degree + 2).div_ceil(2));
        let gv = IntervalRule::gauss_legendre((degree + 1).div_ceil(2));
        let mut points = Vec::with_capacity(gu.len() * gv.len());
        let mut weights = Vec::with_capacity(gu.len() * gv.len());
        for (u, wu) in gu.iter() {
            for (v, wv) in gv.iter() {
                points.push([u[0], v[0] * (1.0 - u[0])]);
                weights.push(wu * wv * (1.0 - u[0]));
            }
        }
        TriangleRule {
            points,
            weights,
            degree,
        }
    }
}

impl IntervalRule {
    /// `n`-point Gauss-Legendre rule on `[0, 1]`, exact for degree `2n - 1`.
    pub fn gauss_legendre(n: usize) -> Self {
        assert!(n >= 1, "Gauss rule needs at least one point");
        let mut points = Vec::with_capacity(n);
        let mut weights = Vec::with_capacity(n);
        for i in 0..n {
            // Newton on P_n starting from the Chebyshev-like guess.
            let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            let mut dp = 1.0;
            for _ in 0..100 {
                let (mut p0, mut p1) = (1.0, x);
                for k in 2..=n {
                    let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                    p0 = p1;
                    p1 = p2;
                }
                let pn = if n == 1 { x } else { p1 };
                let pnm1 = if n == 1 { 1.0 } else { p0 };
                dp = n as f64 * (x * pn - pnm1) / (x * x - 1.0);
                let dx = pn / dp;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            points.push([0.5 * (1.0 - x)]);
            weights.push(0.5 * w);
        }
        IntervalRule {
            points,
            weights,
            degree: 2 * n - 1,
        }
    }

    /// The 3-point Gauss rule used for edge integrals (degree 5).
    pub fn gauss3() -> Self {
        let r = 0.5 * (0.6f64).sqrt();
        IntervalRule {
            points: vec![[0.5 - r], [0.5], [0.5 + r]],
            weights: vec![5.0 / 18.0, 8.0 / 18.0, 5.0 / 18.0],
            degree: 5,
        }
    }
}
