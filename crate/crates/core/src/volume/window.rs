//! CT intensity windowing.

use serde::{Deserialize, Serialize};

use super::Volume;
use crate::error::{Error, Result};

/// A Hounsfield-unit window given by its level (center) and width.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HuWindow {
    pub level: f64,
    pub width: f64,
}

pub const ABDOMEN: HuWindow = HuWindow {
    level: 40.0,
    width: 400.0,
};
pub const LUNG: HuWindow = HuWindow {
    level: -500.0,
    width: 1400.0,
};
pub const BONE: HuWindow = HuWindow {
    level: 400.0,
    width: 1000.0,
};

/// Abdominal, lung and bone windows, in channel order.
pub const CT_WINDOWS: [HuWindow; 3] = [ABDOMEN, LUNG, BONE];

impl HuWindow {
    #[inline]
    pub fn apply(&self, hu: f64) -> f64 {
        ((hu - (self.level - self.width / 2.0)) / self.width).clamp(0.0, 1.0)
    }
}

/// Maps `[level - width/2, level + width/2]` linearly onto `[0, 1]`, clamping outside.
pub fn hu_window(v: &Volume, level: f64, width: f64) -> Result<Volume> {
    if !(width > 0.0 && width.is_finite() && level.is_finite()) {
        return Err(Error::invalid(format!("window width must be positive, got {width}")));
    }
    if v.channels() != 1 {
        return Err(Error::invalid(format!(
            "windowing needs a single-channel volume, got {}",
            v.channels()
        )));
    }
    let w = HuWindow { level, width };
    let data = v.data().iter().map(|&x| w.apply(x)).collect();
    Ok(Volume::from_parts(v.dims(), 1, v.spacing(), data))
}

/// One output channel per window.
pub fn stack_windows(v: &Volume, windows: &[HuWindow]) -> Result<Volume> {
    if windows.is_empty() {
        return Err(Error::invalid("at least one window is required"));
    }
    let mut data = Vec::with_capacity(v.data().len() * windows.len());
    for w in windows {
        data.extend(hu_window(v, w.level, w.width)?.into_data());
    }
    Ok(Volume::from_parts(v.dims(), windows.len(), v.spacing(), data))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::Dims;
    use proptest::prelude::*;

    fn scalar(x: f64) -> Volume {
        Volume::filled(Dims::new(1, 1, 1), 1, x)
    }

    #[test]
    fn abdominal_window_values() {
        let at = |x| hu_window(&scalar(x), 40.0, 400.0).unwrap().data()[0];
        assert_eq!(at(40.0), 0.5);
        assert_eq!(at(-160.0), 0.0);
        assert_eq!(at(240.0), 1.0);
        assert_eq!(hu_window(&scalar(10000.0), 400.0, 1000.0).unwrap().data()[0], 1.0);
    }

    #[test]
    fn rejects_bad_arguments() {
        assert!(hu_window(&scalar(0.0), 0.0, 0.0).is_err());
        assert!(hu_window(&scalar(0.0), 0.0, -5.0).is_err());
        let two = Volume::zeros(Dims::cube(2), 2);
        assert!(hu_window(&two, 40.0, 400.0).is_err());
        assert!(stack_windows(&scalar(0.0), &[]).is_err());
    }

    #[test]
    fn stacks_ct_windows() {
        let v = Volume::from_fn(Dims::new(4, 2, 1), |x, y, _| x as f64 * 300.0 - 600.0 + y as f64)
            .unwrap()
            .with_spacing([2.0, 2.0, 2.0])
            .unwrap();
        let s = stack_windows(&v, &CT_WINDOWS).unwrap();
        assert_eq!(s.channels(), 3);
        assert_eq!(s.spacing(), [2.0; 3]);
        for (k, w) in CT_WINDOWS.iter().enumerate() {
            assert_eq!(s.channel(k), hu_window(&v, w.level, w.width).unwrap().data());
        }
        let single = stack_windows(&v, &[LUNG]).unwrap();
        assert_eq!(single, hu_window(&v, LUNG.level, LUNG.width).unwrap());

        let c = Volume::filled(Dims::cube(3), 1, 123.0);
        let s = stack_windows(&c, &CT_WINDOWS).unwrap();
        for k in 0..3 {
            let ch = s.channel(k);
            assert!(ch.iter().all(|&x| x == ch[0]));
        }
    }

    proptest! {
        #[test]
        fn window_is_bounded_and_monotone(
            a in -1e6f64..1e6, b in -1e6f64..1e6,
            level in -2000f64..2000.0, width in 1e-3f64..5000.0,
        ) {
            let w = HuWindow { level, width };
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let (wl, wh) = (w.apply(lo), w.apply(hi));
            prop_assert!((0.0..=1.0).contains(&wl) && (0.0..=1.0).contains(&wh));
            prop_assert!(wl <= wh);
        }
    }
}
