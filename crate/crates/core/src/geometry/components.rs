use std::collections::VecDeque;

use super::BinaryMask;

const NEIGHBOURS_8: [(isize, isize); 8] = [(-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1)];

/// 8-connected component labels in scan order of each component's first
/// pixel; `0` is background. Returns the labels and the size of each
/// component (index `label - 1`).
pub fn label_components(mask: &BinaryMask) -> (Vec<u32>, Vec<usize>) {
    let (h, w) = (mask.height(), mask.width());
    let mut labels = vec![0u32; h * w];
    let mut sizes = Vec::new();
    let mut queue = VecDeque::new();
    for start in 0..h * w {
        if !mask.bits()[start] || labels[start] != 0 {
            continue;
        }
        sizes.push(0);
        let label = sizes.len() as u32;
        labels[start] = label;
        queue.push_back(start);
        while let Some(i) = queue.pop_front() {
            sizes[label as usize - 1] += 1;
            let (r, c) = ((i / w) as isize, (i % w) as isize);
            for (dr, dc) in NEIGHBOURS_8 {
                let (nr, nc) = (r + dr, c + dc);
                if nr < 0 || nc < 0 || nr >= h as isize || nc >= w as isize {
                    continue;
                }
                let j = nr as usize * w + nc as usize;
                if mask.bits()[j] && labels[j] == 0 {
                    labels[j] = label;
                    queue.push_back(j);
                }
            }
        }
    }
    (labels, sizes)
}

/// Keeps only the largest 8-connected foreground component.
///
/// Ties go to the component whose first pixel comes first in scan order.
/// An empty mask stays empty.
pub fn largest_component(mask: &BinaryMask) -> BinaryMask {
    let (labels, sizes) = label_components(mask);
    let mut out = BinaryMask::new(mask.height(), mask.width(), mask.spacing());
    let Some(best) = sizes
        .iter()
        .enumerate()
        .fold(None, |best: Option<(usize, usize)>, (i, &s)| match best {
            Some((_, bs)) if bs >= s => best,
            _ => Some((i, s)),
        })
        .map(|(i, _)| i as u32 + 1)
    else {
        return out;
    };
    for (i, &l) in labels.iter().enumerate() {
        if l == best {
            out.set(i / mask.width(), i % mask.width(), true);
        }
    }
    out
}
