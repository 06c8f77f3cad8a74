use super::flow::FlowPair;
use super::frame::Plane;

/// The four flow derivatives `(∂u/∂x, ∂u/∂y, ∂v/∂x, ∂v/∂y)`.
#[derive(Clone, Debug, PartialEq)]
pub struct MotionBoundary {
    pub du_dx: Plane,
    pub du_dy: Plane,
    pub dv_dx: Plane,
    pub dv_dy: Plane,
}

fn central_x(p: &Plane) -> Vec<f64> {
    let w = p.width;
    let mut out = Vec::with_capacity(p.data.len());
    for y in 0..p.height {
        for x in 0..w {
            let l = p.at(y, x.saturating_sub(1)) as f64;
            let r = p.at(y, (x + 1).min(w - 1)) as f64;
            out.push(0.5 * (r - l));
        }
    }
    out
}

fn central_y(p: &Plane) -> Vec<f64> {
    let h = p.height;
    let mut out = Vec::with_capacity(p.data.len());
    for y in 0..h {
        for x in 0..p.width {
            let t = p.at(y.saturating_sub(1), x) as f64;
            let b = p.at((y + 1).min(h - 1), x) as f64;
            out.push(0.5 * (b - t));
        }
    }
    out
}

fn to_plane(like: &Plane, values: &[f64]) -> Plane {
    Plane { height: like.height, width: like.width, data: values.iter().map(|&v| v as f32).collect() }
}

/// Central differences in the interior, replicate padding at the border.
pub fn motion_boundary(flow: &FlowPair) -> MotionBoundary {
    MotionBoundary {
        du_dx: to_plane(&flow.u, &central_x(&flow.u)),
        du_dy: to_plane(&flow.u, &central_y(&flow.u)),
        dv_dx: to_plane(&flow.v, &central_x(&flow.v)),
        dv_dy: to_plane(&flow.v, &central_y(&flow.v)),
    }
}

/// Per-pixel magnitude of the four flow derivatives. Blind to any constant
/// (camera-translation) component of the flow.
pub fn motion_map(flow: &FlowPair) -> Plane {
    let ux = central_x(&flow.u);
    let uy = central_y(&flow.u);
    let vx = central_x(&flow.v);
    let vy = central_y(&flow.v);
    let data = (0..ux.len())
        .map(|k| (ux[k] * ux[k] + uy[k] * uy[k] + vx[k] * vx[k] + vy[k] * vy[k]).sqrt() as f32)
        .collect();
    Plane { height: flow.u.height, width: flow.u.width, data }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_flow_has_no_boundary() {
        let f = FlowPair::uniform(6, 9, 2.5, -1.25);
        let b = motion_boundary(&f);
        for p in [&b.du_dx, &b.du_dy, &b.dv_dx, &b.dv_dy] {
            assert!(p.data.iter().all(|&v| v == 0.0));
        }
        assert!(motion_map(&f).data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn linear_ramp_has_unit_x_derivative_inside() {
        let u = Plane::from_fn(7, 7, |_, x| x as f32);
        let f = FlowPair::new(u, Plane::zeros(7, 7)).unwrap();
        let b = motion_boundary(&f);
        let m = motion_map(&f);
        for y in 0..7 {
            for x in 1..6 {
                assert_eq!(b.du_dx.at(y, x), 1.0);
                assert_eq!(m.at(y, x), 1.0);
            }
            // replicate border: one-sided difference halved
            assert_eq!(b.du_dx.at(y, 0), 0.5);
        }
        for p in [&b.du_dy, &b.dv_dx, &b.dv_dy] {
            assert!(p.data.iter().all(|&v| v == 0.0));
        }
    }
}
