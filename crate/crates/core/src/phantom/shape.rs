use crate::geometry::{leading_eigenvector, Spacing};

/// Points sampled along the continuous outline for the analytic length.
pub const BOUNDARY_SAMPLES: usize = 10_000;

/// A rotated ellipse bent into a bean by a quadratic warp of its minor
/// coordinate. Coordinates are in pixels, `(row, col)`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SpleenShape {
    pub center: [f64; 2],
    /// Semi-major axis, px.
    pub a: f64,
    /// Semi-minor axis, px.
    pub b: f64,
    /// Orientation of the major axis, degrees counter-clockwise from the
    /// column axis as displayed.
    pub angle_deg: f64,
    /// Tip displacement along the minor axis as a fraction of `a`.
    pub bend: f64,
}

/// Ground-truth extent of the continuous shape.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnalyticLength {
    pub length_mm: f64,
    pub length_px: f64,
    /// Unit principal axis in millimetre space, `(row, col)` components.
    pub axis: [f64; 2],
    /// Outline points with the smallest and largest projection, px.
    pub endpoints: [[f64; 2]; 2],
}

impl SpleenShape {
    /// Local `(u, v)` coordinates of an image point: `u` along the major axis.
    fn local(&self, row: f64, col: f64) -> (f64, f64) {
        let t = self.angle_deg.to_radians();
        let (dy, dx) = (row - self.center[0], col - self.center[1]);
        (dx * t.cos() - dy * t.sin(), dx * t.sin() + dy * t.cos())
    }

    fn to_image(&self, u: f64, v: f64) -> [f64; 2] {
        let t = self.angle_deg.to_radians();
        let dx = u * t.cos() + v * t.sin();
        let dy = -u * t.sin() + v * t.cos();
        [self.center[0] + dy, self.center[1] + dx]
    }

    /// Normalized radius: `< 1` inside, `1` on the outline.
    pub fn radius(&self, row: f64, col: f64) -> f64 {
        let (u, v) = self.local(row, col);
        let v0 = v - self.bend * self.a * (u / self.a).powi(2);
        ((u / self.a).powi(2) + (v0 / self.b).powi(2)).sqrt()
    }

    pub fn contains(&self, row: f64, col: f64) -> bool {
        self.radius(row, col) <= 1.0
    }

    /// `n` outline points in parameter order.
    pub fn outline(&self, n: usize) -> Vec<[f64; 2]> {
        (0..n)
            .map(|i| {
                let t = std::f64::consts::TAU * i as f64 / n as f64;
                let u = self.a * t.cos();
                let v = self.b * t.sin() + self.bend * self.a * t.cos().powi(2);
                self.to_image(u, v)
            })
            .collect()
    }

    /// Axis-aligned bounding box of the outline: `(row_min, row_max, col_min, col_max)`.
    pub fn bounds(&self) -> (f64, f64, f64, f64) {
        self.outline(2000).iter().fold((f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY), |(a, b, c, d), p| {
            (a.min(p[0]), b.max(p[0]), c.min(p[1]), d.max(p[1]))
        })
    }

    /// Principal axis from the exact second moments of the outline polygon,
    /// then the extent of the outline along it.
    pub fn analytic_length(&self, spacing: Spacing) -> AnalyticLength {
        let pts = self.outline(BOUNDARY_SAMPLES);
        let mm: Vec<[f64; 2]> = pts.iter().map(|p| [p[0] * spacing.sy, p[1] * spacing.sx]).collect();
        // Green's theorem with x = col, y = row
        let (mut area, mut cx, mut cy, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
        for i in 0..mm.len() {
            let [y0, x0] = mm[i];
            let [y1, x1] = mm[(i + 1) % mm.len()];
            let cross = x0 * y1 - x1 * y0;
            area += cross;
            cx += (x0 + x1) * cross;
            cy += (y0 + y1) * cross;
            sxx += (x0 * x0 + x0 * x1 + x1 * x1) * cross;
            syy += (y0 * y0 + y0 * y1 + y1 * y1) * cross;
            sxy += (x0 * y1 + 2.0 * x0 * y0 + 2.0 * x1 * y1 + x1 * y0) * cross;
        }
        area /= 2.0;
        cx /= 6.0 * area;
        cy /= 6.0 * area;
        let xx = sxx / 12.0 / area - cx * cx;
        let yy = syy / 12.0 / area - cy * cy;
        let xy = sxy / 24.0 / area - cx * cy;
        let axis = leading_eigenvector(yy, xy, xx);

        let proj_mm = |p: &[f64; 2]| p[0] * axis[0] + p[1] * axis[1];
        let (mut lo, mut hi) = (0usize, 0usize);
        for (i, p) in mm.iter().enumerate() {
            if proj_mm(p) < proj_mm(&mm[lo]) {
                lo = i;
            }
            if proj_mm(p) > proj_mm(&mm[hi]) {
                hi = i;
            }
        }
        let proj_px = |p: &[f64; 2]| p[0] * axis[0] + p[1] * axis[1];
        let (plo, phi) = pts.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), p| (l.min(proj_px(p)), h.max(proj_px(p))));
        AnalyticLength {
            length_mm: proj_mm(&mm[hi]) - proj_mm(&mm[lo]),
            length_px: phi - plo,
            axis,
            endpoints: [pts[lo], pts[hi]],
        }
    }
}
