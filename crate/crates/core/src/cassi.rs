//! CASSI physics in shifted coordinates.
//!
//! Band `b` is translated `step * b` columns to the right (zero padded) into
//! an `H x W+` frame. In those coordinates the forward operator is a per-band
//! mask multiply followed by a sum over bands.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::cube::{CodedMask, DispersionSpec, HsiCube, Measurement, NoiseSpec, Plane, ShiftedCube};
use crate::error::{dim, Error, Result};

fn check_band(band: usize, bands: usize) -> Result<()> {
    if band >= bands {
        return Err(Error::BandOutOfRange { band, bands });
    }
    Ok(())
}

/// Translates one `H x W` plane into the `H x W+` detector frame.
pub fn shift_band(plane: &Plane, band: usize, bands: usize, spec: DispersionSpec) -> Result<Plane> {
    check_band(band, bands)?;
    let fw = spec.frame_width(plane.width, bands);
    let off = spec.offset(band);
    let mut out = Plane::zeros(plane.height, fw);
    for r in 0..plane.height {
        out.data[r * fw + off..r * fw + off + plane.width]
            .copy_from_slice(&plane.data[r * plane.width..(r + 1) * plane.width]);
    }
    Ok(out)
}

/// Extracts the `W` columns band `band` occupies in an `H x W+` frame.
pub fn unshift_band(
    frame: &Plane,
    band: usize,
    bands: usize,
    scene_width: usize,
    spec: DispersionSpec,
) -> Result<Plane> {
    check_band(band, bands)?;
    if frame.width != spec.frame_width(scene_width, bands) {
        return Err(dim(format!(
            "frame width {} for W={scene_width}, L={bands}",
            frame.width
        )));
    }
    let off = spec.offset(band);
    let mut out = Plane::zeros(frame.height, scene_width);
    for r in 0..frame.height {
        out.data[r * scene_width..(r + 1) * scene_width].copy_from_slice(
            &frame.data[r * frame.width + off..r * frame.width + off + scene_width],
        );
    }
    Ok(out)
}

pub fn shifted_mask(
    mask: &CodedMask,
    band: usize,
    bands: usize,
    spec: DispersionSpec,
) -> Result<Plane> {
    shift_band(&mask.as_plane(), band, bands, spec)
}

/// All `L` shifted masks as one shifted cube.
pub fn shifted_masks(mask: &CodedMask, bands: usize, spec: DispersionSpec) -> ShiftedCube {
    let mut out = ShiftedCube::zeros(mask.height, mask.width, bands, spec);
    let fw = out.frame_width();
    for b in 0..bands {
        let off = spec.offset(b);
        let dst = out.band_mut(b);
        for r in 0..mask.height {
            dst[r * fw + off..r * fw + off + mask.width]
                .copy_from_slice(&mask.pattern[r * mask.width..(r + 1) * mask.width]);
        }
    }
    out
}

pub fn shift_cube(cube: &HsiCube, spec: DispersionSpec) -> ShiftedCube {
    let mut out = ShiftedCube::zeros(cube.height, cube.width, cube.bands, spec);
    let fw = out.frame_width();
    let w = cube.width;
    for b in 0..cube.bands {
        let off = spec.offset(b);
        let src = cube.band(b);
        let dst = out.band_mut(b);
        for r in 0..cube.height {
            dst[r * fw + off..r * fw + off + w].copy_from_slice(&src[r * w..(r + 1) * w]);
        }
    }
    out
}

/// Inverse permutation back to aligned bands; entries outside each band's
/// support are discarded.
pub fn unshift_cube(x: &ShiftedCube) -> HsiCube {
    let (h, w, l) = (x.height, x.scene_width, x.bands);
    let fw = x.frame_width();
    let mut out = HsiCube::zeros(h, w, l);
    for b in 0..l {
        let off = x.spec.offset(b);
        let src = x.band(b);
        let dst = out.band_mut(b);
        for r in 0..h {
            dst[r * w..(r + 1) * w].copy_from_slice(&src[r * fw + off..r * fw + off + w]);
        }
    }
    out
}

/// `A x`: mask every shifted band and sum over bands (fixed band order).
pub fn apply_forward(x: &ShiftedCube, masks: &ShiftedCube) -> Result<Plane> {
    if !x.same_layout(masks) {
        return Err(dim("shifted cube and shifted masks differ in layout"));
    }
    let fw = x.frame_width();
    let mut out = Plane::zeros(x.height, fw);
    for b in 0..x.bands {
        for ((o, &v), &m) in out.data.iter_mut().zip(x.band(b)).zip(masks.band(b)) {
            *o += m * v;
        }
    }
    Ok(out)
}

/// `A^T r` in shifted coordinates: each band is the shifted mask times `r`.
pub fn apply_adjoint(r: &Plane, masks: &ShiftedCube) -> Result<ShiftedCube> {
    if r.height != masks.height || r.width != masks.frame_width() {
        return Err(dim(format!(
            "residual {}x{} vs frame {}x{}",
            r.height,
            r.width,
            masks.height,
            masks.frame_width()
        )));
    }
    let mut out = masks.clone();
    for b in 0..masks.bands {
        for (o, &v) in out.band_mut(b).iter_mut().zip(&r.data) {
            *o *= v;
        }
    }
    Ok(out)
}

/// Detector snapshot `y = sum_b Mshift_b * xshift_b + n`.
pub fn forward_measure(
    cube: &HsiCube,
    mask: &CodedMask,
    spec: DispersionSpec,
    noise: NoiseSpec,
) -> Result<Measurement> {
    mask.check_matches(cube.height, cube.width)?;
    let masks = shifted_masks(mask, cube.bands, spec);
    let mut y = apply_forward(&shift_cube(cube, spec), &masks)?;
    add_noise(&mut y, noise)?;
    Measurement::new(y, cube.width, cube.bands, spec)
}

pub fn add_noise(y: &mut Plane, noise: NoiseSpec) -> Result<()> {
    if let NoiseSpec::Gaussian { sigma, seed } = noise {
        if !(sigma >= 0.0) {
            return Err(Error::InvalidParameter(format!("noise sigma {sigma}")));
        }
        if sigma > 0.0 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let normal = Normal::new(0.0, sigma).expect("sigma checked");
            for v in &mut y.data {
                *v += normal.sample(&mut rng);
            }
        }
    }
    Ok(())
}

/// `A^T y` left in shifted coordinates (per-band `Mshift_b * y`).
pub fn adjoint_shifted(y: &Measurement, mask: &CodedMask) -> Result<ShiftedCube> {
    mask.check_matches(y.height(), y.scene_width)?;
    let masks = shifted_masks(mask, y.bands, y.spec);
    apply_adjoint(&y.plane, &masks)
}

/// `A^T y` mapped back to aligned bands.
pub fn adjoint(y: &Measurement, mask: &CodedMask) -> Result<HsiCube> {
    Ok(unshift_cube(&adjoint_shifted(y, mask)?))
}

/// Seeded Bernoulli(`density`) coded aperture.
pub fn generate_mask(height: usize, width: usize, density: f64, seed: u64) -> Result<CodedMask> {
    if !(0.0..=1.0).contains(&density) {
        return Err(Error::InvalidParameter(format!("mask density {density}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pattern = (0..height * width)
        .map(|_| {
            if rng.random::<f64>() < density {
                1.0
            } else {
                0.0
            }
        })
        .collect();
    CodedMask::new(height, width, pattern)
}
