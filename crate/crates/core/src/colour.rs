//! sRGB → CIELAB (D65) conversion.

/// CIELAB triple `(L, a, b)`.
pub type Lab = [f64; 3];

fn linearise(c: f64) -> f64 {
    if c <= 0.04045 {
        c / 12.92
    } else {
        ((c + 0.055) / 1.055).powf(2.4)
    }
}

fn lab_f(t: f64) -> f64 {
    const DELTA: f64 = 6.0 / 29.0;
    if t > DELTA * DELTA * DELTA {
        t.cbrt()
    } else {
        t / (3.0 * DELTA * DELTA) + 4.0 / 29.0
    }
}

/// Converts sRGB components in `[0, 1]` to CIELAB.
pub fn rgb_to_lab(rgb: [f64; 3]) -> Lab {
    let [r, g, b] = rgb.map(|c| linearise(c.clamp(0.0, 1.0)));
    let x = 0.4124564 * r + 0.3575761 * g + 0.1804375 * b;
    let y = 0.2126729 * r + 0.7151522 * g + 0.0721750 * b;
    let z = 0.0193339 * r + 0.1191920 * g + 0.9503041 * b;
    let (fx, fy, fz) = (lab_f(x / 0.95047), lab_f(y), lab_f(z / 1.08883));
    [116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)]
}

pub fn rgb8_to_lab(rgb: [u8; 3]) -> Lab {
    rgb_to_lab(rgb.map(|c| c as f64 / 255.0))
}

fn lab_f_inv(t: f64) -> f64 {
    const DELTA: f64 = 6.0 / 29.0;
    if t > DELTA {
        t * t * t
    } else {
        3.0 * DELTA * DELTA * (t - 4.0 / 29.0)
    }
}

fn gamma(c: f64) -> f64 {
    if c <= 0.0031308 {
        12.92 * c
    } else {
        1.055 * c.powf(1.0 / 2.4) - 0.055
    }
}

/// Converts CIELAB to sRGB in `[0, 1]`, clamping out-of-gamut values.
pub fn lab_to_rgb(lab: Lab) -> [f64; 3] {
    let fy = (lab[0] + 16.0) / 116.0;
    let fx = fy + lab[1] / 500.0;
    let fz = fy - lab[2] / 200.0;
    let (x, y, z) = (0.95047 * lab_f_inv(fx), lab_f_inv(fy), 1.08883 * lab_f_inv(fz));
    let r = 3.2404542 * x - 1.5371385 * y - 0.4985314 * z;
    let g = -0.9692660 * x + 1.8760108 * y + 0.0415560 * z;
    let b = 0.0556434 * x - 0.2040259 * y + 1.0572252 * z;
    [r, g, b].map(|c| gamma(c.clamp(0.0, 1.0)).clamp(0.0, 1.0))
}
