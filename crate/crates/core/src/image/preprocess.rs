use rayon::prelude::*;

use super::{FrameStack, ImageError, Raster, Result};

/// Running pixelwise sum of frames, added in arrival order.
///
/// Lets callers accumulate frames that are generated or read one at a
/// time without holding the whole stack in memory.
#[derive(Debug, Clone)]
pub struct Accumulator {
    width: usize,
    height: usize,
    frame_max: u32,
    sums: Vec<u32>,
    frames: usize,
}

impl Accumulator {
    pub fn new(first: &Raster) -> Self {
        Self {
            width: first.width,
            height: first.height,
            frame_max: first.max_value,
            sums: first.data.clone(),
            frames: 1,
        }
    }

    pub fn add(&mut self, frame: &Raster) -> Result<()> {
        if frame.dims() != (self.width, self.height) {
            return Err(ImageError::DimensionMismatch {
                expected: (self.width, self.height),
                found: frame.dims(),
            });
        }
        if frame.max_value != self.frame_max {
            return Err(ImageError::MaxValueMismatch {
                expected: self.frame_max,
                found: frame.max_value,
            });
        }
        for (i, (acc, &v)) in self.sums.iter_mut().zip(&frame.data).enumerate() {
            *acc = acc.checked_add(v).ok_or(ImageError::Overflow {
                x: i % self.width,
                y: i / self.width,
            })?;
        }
        self.frames += 1;
        Ok(())
    }

    pub fn frame_count(&self) -> usize {
        self.frames
    }

    /// Final sum; the declared ceiling is the largest sum present.
    pub fn finish(self) -> Raster {
        let max_value = self.sums.iter().copied().max().unwrap_or(0);
        Raster {
            width: self.width,
            height: self.height,
            max_value,
            data: self.sums,
        }
    }
}

/// Exact elementwise sum of every frame in the stack.
pub fn accumulate_frames(stack: &FrameStack) -> Result<Raster> {
    let frames = stack.frames();
    let mut acc = Accumulator::new(&frames[0]);
    for f in &frames[1..] {
        acc.add(f)?;
    }
    Ok(acc.finish())
}

/// Square median filter with edge replication at the borders.
pub fn median_filter(image: &Raster, window: usize) -> Result<Raster> {
    if window == 0 || window.is_multiple_of(2) {
        return Err(ImageError::InvalidWindow(window));
    }
    let side = image.width.min(image.height);
    if window > side {
        return Err(ImageError::WindowTooLarge { window, side });
    }
    if window == 1 {
        return Ok(image.clone());
    }
    let (w, h) = image.dims();
    let r = (window / 2) as isize;
    let mid = window * window / 2;
    let src = &image.data;
    let mut out = vec![0u32; w * h];
    out.par_chunks_mut(w).enumerate().for_each(|(y, row)| {
        let mut buf = Vec::with_capacity(window * window);
        for (x, px) in row.iter_mut().enumerate() {
            buf.clear();
            for dy in -r..=r {
                let yy = (y as isize + dy).clamp(0, h as isize - 1) as usize;
                let line = &src[yy * w..(yy + 1) * w];
                for dx in -r..=r {
                    let xx = (x as isize + dx).clamp(0, w as isize - 1) as usize;
                    buf.push(line[xx]);
                }
            }
            let (_, m, _) = buf.select_nth_unstable(mid);
            *px = *m;
        }
    });
    Ok(Raster {
        width: w,
        height: h,
        max_value: image.max_value,
        data: out,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn stack_of(frames: Vec<Raster>) -> FrameStack {
        FrameStack::new(frames).unwrap()
    }

    #[test]
    fn constant_frames_sum() {
        let f = Raster::filled(3, 2, 3).unwrap();
        let out = accumulate_frames(&stack_of(vec![f; 700])).unwrap();
        assert!(out.data().iter().all(|&v| v == 2100));
        assert_eq!(out.max_value(), 2100);
    }

    #[test]
    fn single_frame_is_identity() {
        let f = Raster::new(2, 2, 9, vec![1, 2, 3, 4]).unwrap();
        let out = accumulate_frames(&stack_of(vec![f.clone()])).unwrap();
        assert_eq!(out.data(), f.data());
    }

    #[test]
    fn random_frames_match_double_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let frames: Vec<Raster> = (0..10)
            .map(|_| {
                let d = (0..16).map(|_| rng.gen_range(0..=4095)).collect();
                Raster::new(4, 4, 4095, d).unwrap()
            })
            .collect();
        let mut expected = [[0u64; 4]; 4];
        for f in &frames {
            for (y, row) in expected.iter_mut().enumerate() {
                for (x, cell) in row.iter_mut().enumerate() {
                    *cell += f.get(x, y) as u64;
                }
            }
        }
        let out = accumulate_frames(&stack_of(frames)).unwrap();
        for y in 0..4 {
            for x in 0..4 {
                assert_eq!(out.get(x, y) as u64, expected[y][x]);
            }
        }
    }

    #[test]
    fn overflow_names_pixel() {
        let a = Raster::new(2, 1, u32::MAX, vec![0, u32::MAX]).unwrap();
        let b = Raster::new(2, 1, u32::MAX, vec![0, 1]).unwrap();
        let err = accumulate_frames(&stack_of(vec![a, b])).unwrap_err();
        assert!(matches!(err, ImageError::Overflow { x: 1, y: 0 }));
    }

    #[test]
    fn accumulator_rejects_mismatched_frame() {
        let a = Raster::filled(2, 2, 1).unwrap();
        let mut acc = Accumulator::new(&a);
        assert!(acc.add(&Raster::filled(2, 3, 1).unwrap()).is_err());
    }

    #[test]
    fn median_of_constant_is_constant() {
        let img = Raster::filled(7, 6, 42).unwrap();
        assert_eq!(median_filter(&img, 5).unwrap(), img);
    }

    #[test]
    fn isolated_spike_removed() {
        let mut d = vec![0; 25];
        d[12] = 100;
        let img = Raster::new(5, 5, 100, d).unwrap();
        let out = median_filter(&img, 3).unwrap();
        assert!(out.data().iter().all(|&v| v == 0));
        assert_eq!(out.max_value(), 100);
    }

    #[test]
    fn window_one_is_identity() {
        let img = Raster::new(3, 2, 9, vec![5, 1, 9, 0, 2, 7]).unwrap();
        assert_eq!(median_filter(&img, 1).unwrap(), img);
    }

    #[test]
    fn rejects_bad_windows() {
        let img = Raster::filled(4, 4, 1).unwrap();
        assert!(matches!(median_filter(&img, 0), Err(ImageError::InvalidWindow(0))));
        assert!(matches!(median_filter(&img, 2), Err(ImageError::InvalidWindow(2))));
        assert!(matches!(
            median_filter(&img, 5),
            Err(ImageError::WindowTooLarge { .. })
        ));
    }

    #[test]
    fn edge_replication_at_corner() {
        // 3x3 window at (0,0) sees the corner value four times.
        let img = Raster::new(3, 3, 9, vec![9, 0, 0, 0, 0, 0, 0, 0, 0]).unwrap();
        let out = median_filter(&img, 3).unwrap();
        // neighborhood: 9,9,0 / 9,9,0 / 0,0,0 -> sorted median is 0
        assert_eq!(out.get(0, 0), 0);
        let img = Raster::new(3, 3, 9, vec![9, 9, 0, 9, 0, 0, 0, 0, 0]).unwrap();
        // neighborhood: 9,9,9 / 9,9,9 / 9,9,0 ... replicated -> median 9
        assert_eq!(median_filter(&img, 3).unwrap().get(0, 0), 9);
    }

    fn arb_raster() -> impl Strategy<Value = Raster> {
        (3usize..9, 3usize..9).prop_flat_map(|(w, h)| {
            proptest::collection::vec(0u32..50, w * h)
                .prop_map(move |d| Raster::new(w, h, 50, d).unwrap())
        })
    }

    proptest! {
        #[test]
        fn median_output_within_neighborhood(img in arb_raster(), half in 0usize..2) {
            let window = 2 * half + 1;
            let out = median_filter(&img, window).unwrap();
            let (w, h) = img.dims();
            let r = half as isize;
            for y in 0..h {
                for x in 0..w {
                    let mut lo = u32::MAX;
                    let mut hi = 0;
                    for dy in -r..=r {
                        for dx in -r..=r {
                            let yy = (y as isize + dy).clamp(0, h as isize - 1) as usize;
                            let xx = (x as isize + dx).clamp(0, w as isize - 1) as usize;
                            lo = lo.min(img.get(xx, yy));
                            hi = hi.max(img.get(xx, yy));
                        }
                    }
                    let v = out.get(x, y);
                    prop_assert!(lo <= v && v <= hi);
                    prop_assert!(img.data().contains(&v));
                }
            }
        }

        #[test]
        fn accumulation_is_linear(a in arb_raster(), n in 1usize..4, m in 1usize..4) {
            let mut b_data = a.data().to_vec();
            b_data.reverse();
            let b = Raster::new(a.width(), a.height(), a.max_value(), b_data).unwrap();
            let sa = accumulate_frames(&stack_of(vec![a.clone(); n])).unwrap();
            let sb = accumulate_frames(&stack_of(vec![b.clone(); m])).unwrap();
            let mut all = vec![a; n];
            all.extend(std::iter::repeat_n(b, m));
            let joint = accumulate_frames(&stack_of(all)).unwrap();
            let summed: Vec<u32> = sa.data().iter().zip(sb.data()).map(|(x, y)| x + y).collect();
            prop_assert_eq!(joint.data(), &summed[..]);
        }
    }
}
