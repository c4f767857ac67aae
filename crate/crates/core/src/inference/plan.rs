use crate::error::{ensure, Error, Result};

/// Overlapping window geometry over `frames` frames.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct WindowPlan {
    pub frames: usize,
    pub window: usize,
    pub count: usize,
    pub slide: usize,
    pub overlap: usize,
    pub starts: Vec<usize>,
    /// Number of windows containing each frame.
    pub coverage: Vec<usize>,
}

impl WindowPlan {
    pub fn range(&self, k: usize) -> (usize, usize) {
        (self.starts[k], self.starts[k] + self.window)
    }
}

fn overlap_for(frames: usize, window: usize, count: usize) -> Option<usize> {
    if count == 0 || window == 0 || window > frames {
        return None;
    }
    if count == 1 {
        return (frames == window).then_some(0);
    }
    let num = (count * window).checked_sub(frames)?;
    (num % (count - 1) == 0)
        .then(|| num / (count - 1))
        .filter(|&o| o < window)
}

/// Window counts that tile `frames` with windows of `window` frames.
pub fn admissible_counts(frames: usize, window: usize) -> Vec<usize> {
    if window == 0 || window > frames {
        return Vec::new();
    }
    // A slide of at least one frame bounds the count.
    (1..=frames - window + 1)
        .filter(|&k| overlap_for(frames, window, k).is_some())
        .collect()
}

/// `K` windows of `window` frames, evenly strided so the first starts at 0
/// and the last ends at `frames`.
pub fn plan_windows(frames: usize, window: usize, count: usize) -> Result<WindowPlan> {
    ensure!(window >= 1, Config, "window must be at least 1");
    ensure!(count >= 1, Config, "window count must be at least 1");
    let Some(overlap) = overlap_for(frames, window, count) else {
        let mut suggestions = admissible_counts(frames, window);
        suggestions.sort_by_key(|&k| (k.abs_diff(count), k));
        suggestions.truncate(3);
        suggestions.sort_unstable();
        return Err(Error::Geometry {
            message: format!("{count} windows of {window} frames cannot tile {frames} frames"),
            suggestions,
        });
    };
    let slide = window - overlap;
    let starts: Vec<usize> = (0..count).map(|k| k * slide).collect();
    let mut coverage = vec![0; frames];
    for &s in &starts {
        for c in &mut coverage[s..s + window] {
            *c += 1;
        }
    }
    Ok(WindowPlan { frames, window, count, slide, overlap, starts, coverage })
}
