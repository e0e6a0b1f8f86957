use std::collections::VecDeque;

use super::{Dims, LabelId, LabelVolume, Volume};
use crate::error::{Error, Result};

/// Calls `f` for each 6-connected neighbour of voxel `i`.
#[inline]
pub(crate) fn for_each_neighbor6(dims: Dims, i: usize, mut f: impl FnMut(usize)) {
    let c = dims.coords(i);
    for axis in 0..3 {
        let s = dims.stride(axis);
        if c[axis] > 0 {
            f(i - s);
        }
        if c[axis] + 1 < dims.axis(axis) {
            f(i + s);
        }
    }
}

/// Keeps only the largest 6-connected component of `label`, zeroing the rest.
///
/// Components are discovered in linear-index order, so on equal sizes the one
/// containing the smallest linear index wins.
pub fn largest_component(l: &LabelVolume, label: LabelId) -> LabelVolume {
    let dims = l.dims();
    let labels = l.labels();
    let mut component = vec![u32::MAX; labels.len()];
    let mut sizes: Vec<usize> = Vec::new();
    let mut queue = VecDeque::new();

    for seed in 0..labels.len() {
        if labels[seed] != label || component[seed] != u32::MAX {
            continue;
        }
        let id = sizes.len() as u32;
        let mut size = 0;
        component[seed] = id;
        queue.push_back(seed);
        while let Some(i) = queue.pop_front() {
            size += 1;
            for_each_neighbor6(dims, i, |j| {
                if labels[j] == label && component[j] == u32::MAX {
                    component[j] = id;
                    queue.push_back(j);
                }
            });
        }
        sizes.push(size);
    }

    if sizes.len() <= 1 {
        return l.clone();
    }
    let mut keep = 0;
    for (id, &size) in sizes.iter().enumerate() {
        if size > sizes[keep] {
            keep = id;
        }
    }
    let mut out = l.clone();
    for (v, &c) in out.labels.iter_mut().zip(&component) {
        if *v == label && c != keep as u32 {
            *v = 0;
        }
    }
    out
}

/// One indicator channel per id in `label_set`.
pub fn one_hot(l: &LabelVolume, label_set: &[LabelId]) -> Result<Volume> {
    if label_set.is_empty() {
        return Err(Error::invalid("label set must not be empty"));
    }
    for (k, &id) in label_set.iter().enumerate() {
        if id == 0 {
            return Err(Error::invalid("label set must not contain background (0)"));
        }
        if label_set[..k].contains(&id) {
            return Err(Error::invalid(format!("duplicate label id {id}")));
        }
    }
    let n = l.dims().len();
    let mut data = vec![0.0; n * label_set.len()];
    for (k, &id) in label_set.iter().enumerate() {
        for (d, &v) in data[k * n..(k + 1) * n].iter_mut().zip(l.labels()) {
            if v == id {
                *d = 1.0;
            }
        }
    }
    Ok(Volume::from_parts(l.dims(), label_set.len(), l.spacing(), data))
}
