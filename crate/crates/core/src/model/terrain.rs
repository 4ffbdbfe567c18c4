use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Ground height as a function of the horizontal coordinate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TerrainProfile {
    #[default]
    Flat,
    /// `offset + amplitude * sin(2π x / wavelength + phase)`
    Sinusoidal {
        amplitude: f64,
        wavelength: f64,
        #[serde(default)]
        phase: f64,
        #[serde(default)]
        offset: f64,
    },
    /// Linear interpolation between `(x, height)` breakpoints, held constant
    /// beyond the first and last breakpoint. A positive `rounding` replaces
    /// each corner by a parabolic arc of that half-width (capped at half the
    /// adjacent segments), keeping the slope continuous.
    PiecewiseLinear {
        points: Vec<[f64; 2]>,
        #[serde(default)]
        rounding: f64,
    },
}

impl TerrainProfile {
    /// Rising staircase: `count` steps of `rise` meters, one every `tread`
    /// meters starting at `start`, each riser a ramp of width `ramp`.
    pub fn staircase(start: f64, tread: f64, rise: f64, ramp: f64, count: usize) -> Self {
        let mut points = vec![[start - tread, 0.0]];
        for k in 0..count {
            let x = start + k as f64 * tread;
            let h = k as f64 * rise;
            points.push([x, h]);
            points.push([x + ramp, h + rise]);
        }
        TerrainProfile::PiecewiseLinear { points, rounding: 0.0 }
    }

    /// Flat until `start`, then a constant slope of `degrees` for `length`
    /// meters, then flat, with 5 cm rounded corners.
    pub fn incline(start: f64, degrees: f64, length: f64) -> Self {
        let rise = length * degrees.to_radians().tan();
        TerrainProfile::PiecewiseLinear {
            points: vec![[start, 0.0], [start + length, rise]],
            rounding: 0.05,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            TerrainProfile::Flat => Ok(()),
            TerrainProfile::Sinusoidal {
                amplitude,
                wavelength,
                phase,
                offset,
            } => {
                if !(*wavelength > 0.0) || ![amplitude, phase, offset].iter().all(|v| v.is_finite()) {
                    return Err(Error::validation("terrain", "sinusoid needs a positive wavelength"));
                }
                Ok(())
            }
            TerrainProfile::PiecewiseLinear { points, rounding } => {
                if !(rounding.is_finite() && *rounding >= 0.0) {
                    return Err(Error::validation("terrain", "rounding must be non-negative"));
                }
                if points.is_empty() {
                    return Err(Error::validation("terrain", "piecewise profile has no points"));
                }
                if points.windows(2).any(|w| !(w[1][0] > w[0][0])) {
                    return Err(Error::validation(
                        "terrain",
                        "piecewise breakpoints must be strictly increasing in x",
                    ));
                }
                Ok(())
            }
        }
    }

    pub fn height(&self, x: f64) -> f64 {
        self.height_and_slope(x).0
    }

    pub fn slope(&self, x: f64) -> f64 {
        self.height_and_slope(x).1
    }

    pub fn height_and_slope(&self, x: f64) -> (f64, f64) {
        match self {
            TerrainProfile::Flat => (0.0, 0.0),
            TerrainProfile::Sinusoidal {
                amplitude,
                wavelength,
                phase,
                offset,
            } => {
                let k = 2.0 * std::f64::consts::PI / wavelength;
                let arg = k * x + phase;
                (offset + amplitude * arg.sin(), amplitude * k * arg.cos())
            }
            TerrainProfile::PiecewiseLinear { points, rounding } => {
                let n = points.len();
                // Segment k joins points k-1 and k; segments 0 and n are the flat ends.
                let slope = |k: usize| {
                    if k == 0 || k == n {
                        0.0
                    } else {
                        (points[k][1] - points[k - 1][1]) / (points[k][0] - points[k - 1][0])
                    }
                };
                let length = |k: usize| {
                    if k == 0 || k == n {
                        f64::INFINITY
                    } else {
                        points[k][0] - points[k - 1][0]
                    }
                };
                let k = points.partition_point(|p| p[0] <= x);
                if *rounding > 0.0 {
                    let near = if k == 0 {
                        0
                    } else if k == n || x - points[k - 1][0] < points[k][0] - x {
                        k - 1
                    } else {
                        k
                    };
                    let r = rounding.min(0.5 * length(near)).min(0.5 * length(near + 1));
                    let d = x - points[near][0];
                    if d.abs() < r {
                        let (s1, s2) = (slope(near), slope(near + 1));
                        let t = d + r;
                        let h = points[near][1] + s1 * d + (s2 - s1) * t * t / (4.0 * r);
                        return (h, s1 + (s2 - s1) * t / (2.0 * r));
                    }
                }
                if k == 0 {
                    return (points[0][1], 0.0);
                }
                if k == n {
                    return (points[n - 1][1], 0.0);
                }
                let a = points[k - 1];
                (a[1] + slope(k) * (x - a[0]), slope(k))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn piecewise_profile_is_continuous() {
        let t = TerrainProfile::staircase(0.5, 0.4, 0.05, 0.02, 4);
        t.validate().unwrap();
        let mut x = -1.0;
        let mut prev = t.height(x);
        while x < 3.0 {
            x += 1e-4;
            let h = t.height(x);
            // steepest ramp is 2.5 m/m
            assert!((h - prev).abs() <= 2.5e-4 + 1e-12);
            prev = h;
        }
        assert!((t.height(10.0) - 0.2).abs() < 1e-12);
        assert_eq!(t.height(-5.0), 0.0);
    }

    #[test]
    fn rounded_corners_keep_slope_continuous() {
        let sharp = TerrainProfile::incline(0.5, 10.0, 2.0);
        let TerrainProfile::PiecewiseLinear { points, .. } = sharp.clone() else { unreachable!() };
        let sharp = TerrainProfile::PiecewiseLinear { points, rounding: 0.0 };
        let round = TerrainProfile::incline(0.5, 10.0, 2.0);
        round.validate().unwrap();
        let rise = 2.0 * 10f64.to_radians().tan();
        let mut x = 0.0;
        let mut prev = round.slope(x);
        while x < 3.0 {
            x += 1e-3;
            let (h, s) = round.height_and_slope(x);
            assert!((s - prev).abs() <= rise / 2.0 / 0.1 * 1e-3 + 1e-12);
            let fd = (round.height(x + 1e-7) - round.height(x - 1e-7)) / 2e-7;
            assert!((fd - s).abs() < 1e-6);
            if (x - 0.5).abs() > 0.05 && (x - 2.5).abs() > 0.05 {
                assert!((h - sharp.height(x)).abs() < 1e-12);
            } else {
                assert!(h >= sharp.height(x) - 1e-12 || (x - 2.5).abs() <= 0.05);
            }
            prev = s;
        }
    }

    #[test]
    fn sinusoid_height_and_slope() {
        let t = TerrainProfile::Sinusoidal {
            amplitude: 0.1,
            wavelength: 2.0,
            phase: std::f64::consts::FRAC_PI_2,
            offset: 0.0,
        };
        assert!((t.height(0.0) - 0.1).abs() < 1e-15);
        let x = 0.37;
        let fd = (t.height(x + 1e-6) - t.height(x - 1e-6)) / 2e-6;
        assert!((fd - t.slope(x)).abs() < 1e-8);
    }

    #[test]
    fn incline_rises_at_requested_angle() {
        let t = TerrainProfile::incline(1.0, 10.0, 2.0);
        assert!((t.slope(1.5) - 10f64.to_radians().tan()).abs() < 1e-12);
        assert_eq!(t.height(0.5), 0.0);
    }

    #[test]
    fn rejects_unsorted_points() {
        let t = TerrainProfile::PiecewiseLinear {
            points: vec![[1.0, 0.0], [0.5, 0.1]],
            rounding: 0.0,
        };
        assert!(t.validate().is_err());
    }
}
