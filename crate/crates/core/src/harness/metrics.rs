use crate::error::{Error, Result};
use crate::render::Image;

/// Reported for identical images.
pub const PSNR_CAP: f64 = 100.0;

fn psnr_from_mse(mse: f64) -> f64 {
    if mse <= 0.0 {
        PSNR_CAP
    } else {
        (10.0 * (1.0 / mse).log10()).min(PSNR_CAP)
    }
}

/// Mean squared error of each pixel across its channels.
pub fn pixel_errors(image: &Image, reference: &Image) -> Result<Vec<f64>> {
    if !image.same_shape(reference) {
        return Err(Error::shape(format!(
            "image {}x{}x{} vs reference {}x{}x{}",
            image.width, image.height, image.channels, reference.width, reference.height, reference.channels
        )));
    }
    let c = image.channels;
    Ok(image
        .data
        .chunks(c)
        .zip(reference.data.chunks(c))
        .map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / c as f64)
        .collect())
}

/// `10·log₁₀(1 / MSE)` for unit-range images, capped at [`PSNR_CAP`].
pub fn psnr(image: &Image, reference: &Image) -> Result<f64> {
    let e = pixel_errors(image, reference)?;
    Ok(psnr_from_mse(e.iter().sum::<f64>() / e.len().max(1) as f64))
}

/// PSNR over the `⌈p% · N⌉` pixels with the largest error (ties broken in
/// row-major order).
pub fn worst_percentile_psnr(image: &Image, reference: &Image, p: f64) -> Result<f64> {
    if !(p > 0.0 && p <= 100.0) {
        return Err(Error::Domain(format!("percentile must lie in (0, 100], got {p}")));
    }
    let e = pixel_errors(image, reference)?;
    Ok(worst_percentile_of(&e, p))
}

pub(crate) fn worst_percentile_of(errors: &[f64], p: f64) -> f64 {
    let n = errors.len();
    let k = ((p / 100.0 * n as f64).ceil() as usize).clamp(1, n.max(1));
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| errors[b].total_cmp(&errors[a]).then(a.cmp(&b)));
    let mse = order[..k.min(n)].iter().map(|&i| errors[i]).sum::<f64>() / k as f64;
    psnr_from_mse(mse)
}

/// PSNR restricted to pixels where `mask` holds.
pub fn masked_psnr(image: &Image, reference: &Image, mask: &[bool]) -> Result<f64> {
    let e = pixel_errors(image, reference)?;
    if mask.len() != e.len() {
        return Err(Error::shape("mask does not match the image"));
    }
    let (sum, count) = e.iter().zip(mask).filter(|(_, &m)| m).fold((0.0, 0usize), |(s, c), (e, _)| (s + e, c + 1));
    Ok(psnr_from_mse(if count == 0 { 0.0 } else { sum / count as f64 }))
}
