//! Connected-component labeling on binary grids.

use std::collections::VecDeque;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Connectivity {
    Four,
    #[default]
    Eight,
}

impl TryFrom<u8> for Connectivity {
    type Error = String;

    fn try_from(v: u8) -> Result<Self, Self::Error> {
        match v {
            4 => Ok(Self::Four),
            8 => Ok(Self::Eight),
            other => Err(format!("connectivity must be 4 or 8, got {other}")),
        }
    }
}

impl Connectivity {
    pub fn as_u8(self) -> u8 {
        match self {
            Self::Four => 4,
            Self::Eight => 8,
        }
    }

    fn offsets(self) -> &'static [(isize, isize)] {
        match self {
            Self::Four => &[(-1, 0), (0, -1), (0, 1), (1, 0)],
            Self::Eight => &[
                (-1, -1),
                (-1, 0),
                (-1, 1),
                (0, -1),
                (0, 1),
                (1, -1),
                (1, 0),
                (1, 1),
            ],
        }
    }
}

/// Component labels for a binary grid. Background pixels carry `None`;
/// components are numbered in the row-major order of their first pixel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Components {
    pub labels: Vec<Option<u32>>,
    pub sizes: Vec<usize>,
}

impl Components {
    /// Index of the biggest component; the earliest one wins ties.
    pub fn largest(&self) -> Option<u32> {
        let mut best: Option<(u32, usize)> = None;
        for (id, &size) in self.sizes.iter().enumerate() {
            if best.is_none_or(|(_, s)| size > s) {
                best = Some((id as u32, size));
            }
        }
        best.map(|b| b.0)
    }
}

pub fn label(foreground: &[bool], height: usize, width: usize, conn: Connectivity) -> Components {
    assert_eq!(foreground.len(), height * width);
    let mut labels = vec![None; foreground.len()];
    let mut sizes = Vec::new();
    let mut queue = VecDeque::new();
    for start in 0..foreground.len() {
        if !foreground[start] || labels[start].is_some() {
            continue;
        }
        let id = sizes.len() as u32;
        labels[start] = Some(id);
        queue.push_back(start);
        let mut size = 0;
        while let Some(p) = queue.pop_front() {
            size += 1;
            let (r, c) = ((p / width) as isize, (p % width) as isize);
            for &(dr, dc) in conn.offsets() {
                let (nr, nc) = (r + dr, c + dc);
                if nr < 0 || nc < 0 || nr >= height as isize || nc >= width as isize {
                    continue;
                }
                let q = nr as usize * width + nc as usize;
                if foreground[q] && labels[q].is_none() {
                    labels[q] = Some(id);
                    queue.push_back(q);
                }
            }
        }
        sizes.push(size);
    }
    Components { labels, sizes }
}
