use std::path::Path;

use ndarray::ArrayView2;

use crate::error::CliResult;

/// Binary PPM with equal RGB channels, min/max normalized to 0..=255.
/// Row 0 of the array is the top image row.
pub fn encode_ppm(field: ArrayView2<'_, f64>) -> Vec<u8> {
    let (h, w) = field.dim();
    let lo = field.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = field.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    out.reserve(3 * h * w);
    for v in field.iter() {
        let g = if span > 0.0 && span.is_finite() {
            (((v - lo) / span) * 255.0).round().clamp(0.0, 255.0) as u8
        } else {
            0
        };
        out.extend_from_slice(&[g, g, g]);
    }
    out
}

pub fn write_ppm(path: &Path, field: ArrayView2<'_, f64>) -> CliResult<()> {
    pisd_core::io::write_atomic(path, &encode_ppm(field))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn header_and_normalization() {
        let f = array![[0.0, 1.0, 2.0], [-2.0, 4.0, 1.0]];
        let bytes = encode_ppm(f.view());
        let header = b"P6\n3 2\n255\n";
        assert_eq!(&bytes[..header.len()], header);
        let px: Vec<u8> = bytes[header.len()..].chunks(3).map(|c| c[0]).collect();
        assert_eq!(px, vec![85, 128, 170, 0, 255, 128]);
    }

    #[test]
    fn constant_field_is_black() {
        let f = array![[3.0, 3.0]];
        assert!(encode_ppm(f.view())[11..].iter().all(|b| *b == 0));
    }
}
