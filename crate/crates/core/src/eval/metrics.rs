//! Depth error metrics.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::ImageBuffer;

/// MAE/RMSE in millimetres, iMAE/iRMSE in 1/km.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct DepthErrorReport {
    pub mae: f64,
    pub rmse: f64,
    pub imae: f64,
    pub irmse: f64,
    pub count: usize,
}

fn same_shape(a: &ImageBuffer, b: &ImageBuffer) -> Result<()> {
    if a.width() != b.width() || a.height() != b.height() || a.channels() != 1 || b.channels() != 1 {
        return Err(Error::Domain(format!(
            "depth maps differ in shape: {}x{}x{} vs {}x{}x{}",
            a.width(),
            a.height(),
            a.channels(),
            b.width(),
            b.height(),
            b.channels()
        )));
    }
    Ok(())
}

/// Errors over pixels where both maps are positive and `gt` lies in
/// `[d_min, d_max]`. Inputs are metres.
pub fn depth_metrics(pred: &ImageBuffer, gt: &ImageBuffer, d_min: f64, d_max: f64) -> Result<DepthErrorReport> {
    same_shape(pred, gt)?;
    let (mut ae, mut se, mut iae, mut ise, mut n) = (0.0, 0.0, 0.0, 0.0, 0usize);
    for (&p, &g) in pred.data().iter().zip(gt.data()) {
        if !(p > 0.0 && g > 0.0 && g >= d_min && g <= d_max) {
            continue;
        }
        let e = p - g;
        let ie = 1.0 / p - 1.0 / g;
        ae += e.abs();
        se += e * e;
        iae += ie.abs();
        ise += ie * ie;
        n += 1;
    }
    if n == 0 {
        return Err(Error::Degenerate("no valid pixel for depth metrics".into()));
    }
    let m = n as f64;
    Ok(DepthErrorReport {
        mae: 1000.0 * ae / m,
        rmse: 1000.0 * (se / m).sqrt(),
        imae: 1000.0 * iae / m,
        irmse: 1000.0 * (ise / m).sqrt(),
        count: n,
    })
}

/// Lower middle element of the sorted values.
pub fn lower_median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let k = (values.len() - 1) / 2;
    let (_, m, _) = values.select_nth_unstable_by(k, f64::total_cmp);
    Some(*m)
}

/// `median(gt) / median(pred)` over jointly positive pixels.
pub fn median_scale(pred: &ImageBuffer, gt: &ImageBuffer) -> Result<f64> {
    same_shape(pred, gt)?;
    let (mut p, mut g): (Vec<f64>, Vec<f64>) = pred
        .data()
        .iter()
        .zip(gt.data())
        .filter(|(p, g)| **p > 0.0 && **g > 0.0)
        .map(|(p, g)| (*p, *g))
        .unzip();
    let mp = lower_median(&mut p).ok_or_else(|| Error::Degenerate("no jointly valid pixel".into()))?;
    let mg = lower_median(&mut g).expect("same length");
    if mp == 0.0 {
        return Err(Error::Degenerate("median prediction is zero".into()));
    }
    Ok(mg / mp)
}
