use std::path::Path;

use tracing::warn;

use super::{IngestError, RawPost};

/// Posts read from a replay file, sorted by timestamp.
#[derive(Debug, Clone, Default)]
pub struct Replay {
    pub posts: Vec<RawPost>,
    pub skipped: usize,
}

/// Malformed lines above this fraction fail the whole file.
const MAX_MALFORMED_FRACTION: f64 = 0.10;

pub fn load_replay(path: &Path) -> Result<Replay, IngestError> {
    let data = std::fs::read_to_string(path).map_err(|source| IngestError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_replay(&data)
}

/// Parses line-delimited JSON posts. Blank lines are ignored; malformed lines
/// are counted and skipped. The result is stably sorted by timestamp.
pub fn parse_replay(data: &str) -> Result<Replay, IngestError> {
    let mut posts = Vec::new();
    let mut skipped = 0;
    let mut total = 0;
    for (lineno, line) in data.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        total += 1;
        match serde_json::from_str::<RawPost>(line) {
            Ok(post) if !post.text.trim().is_empty() && !post.post_id.is_empty() => {
                posts.push(post)
            }
            Ok(_) => {
                warn!(line = lineno + 1, "replay record with empty text or id");
                skipped += 1;
            }
            Err(e) => {
                warn!(line = lineno + 1, error = %e, "malformed replay record");
                skipped += 1;
            }
        }
    }
    if total > 0 && skipped as f64 > MAX_MALFORMED_FRACTION * total as f64 {
        return Err(IngestError::Format {
            malformed: skipped,
            total,
        });
    }
    posts.sort_by_key(|p| p.timestamp);
    Ok(Replay { posts, skipped })
}
