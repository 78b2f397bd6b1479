use crate::bbox::BBox;

/// Grows boxes thinner than one pixel to one pixel about their center.
pub fn sanitize_box(b: &BBox) -> BBox {
    let mut out = *b;
    if b.width() < 1.0 || b.height() < 1.0 {
        log::warn!("degenerate box {:?} clamped to 1 px", <[f32; 4]>::from(*b));
        let (cx, cy) = b.center();
        if b.width() < 1.0 {
            out.x1 = cx - 0.5;
            out.x2 = cx + 0.5;
        }
        if b.height() < 1.0 {
            out.y1 = cy - 0.5;
            out.y2 = cy + 0.5;
        }
    }
    out
}

/// Adds the bilinear weights of grid point `(y, x)` (cell-center
/// coordinates) into `row`; points are clamped onto the grid.
pub(crate) fn bilinear(row: &mut [f64], g: usize, y: f64, x: f64, w: f64) {
    let axis = |v: f64| -> (usize, usize, f64) {
        let v = v.clamp(0.0, (g - 1) as f64);
        let lo = v.floor() as usize;
        let hi = (lo + 1).min(g - 1);
        (lo, hi, v - lo as f64)
    };
    let (y0, y1, ly) = axis(y);
    let (x0, x1, lx) = axis(x);
    row[y0 * g + x0] += w * (1.0 - ly) * (1.0 - lx);
    row[y0 * g + x1] += w * (1.0 - ly) * lx;
    row[y1 * g + x0] += w * ly * (1.0 - lx);
    row[y1 * g + x1] += w * ly * lx;
}

/// Row-major `boxes x g^2` matrix whose row `i`, applied to a token grid,
/// yields ROI-Align of box `i` mean-pooled over its `p x p` cells. Each cell
/// averages `sampling^2` bilinear samples; rows sum to one.
pub fn roi_sampling_matrix(boxes: &[BBox], width: f32, height: f32, g: usize, p: usize, sampling: usize) -> Vec<f64> {
    let mut out = vec![0.0; boxes.len() * g * g];
    let (sx, sy) = (g as f64 / width as f64, g as f64 / height as f64);
    let w = 1.0 / (p * p * sampling * sampling) as f64;
    for (i, b) in boxes.iter().enumerate() {
        let b = sanitize_box(b);
        let row = &mut out[i * g * g..(i + 1) * g * g];
        let (x1, y1) = (b.x1 as f64 * sx, b.y1 as f64 * sy);
        let bin_w = (b.x2 as f64 * sx - x1) / p as f64;
        let bin_h = (b.y2 as f64 * sy - y1) / p as f64;
        for cy in 0..p {
            for cx in 0..p {
                for iy in 0..sampling {
                    let y = y1 + bin_h * (cy as f64 + (iy as f64 + 0.5) / sampling as f64) - 0.5;
                    for ix in 0..sampling {
                        let x = x1 + bin_w * (cx as f64 + (ix as f64 + 0.5) / sampling as f64) - 0.5;
                        bilinear(row, g, y, x, w);
                    }
                }
            }
        }
    }
    out
}
