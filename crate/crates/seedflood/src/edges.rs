//! Plain-text edge lists: one `u v` pair per line, separated by whitespace or
//! a comma. `#` starts a comment; blank lines are ignored.

use std::path::{Path, PathBuf};

#[derive(Debug, thiserror::Error)]
pub enum EdgeListError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}, line {line}: expected two node indices, found {text:?}")]
    Malformed { path: PathBuf, line: usize, text: String },
}

pub fn load_edge_list(path: &Path) -> Result<Vec<(usize, usize)>, EdgeListError> {
    let text = std::fs::read_to_string(path).map_err(|source| EdgeListError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_edge_list(&text).map_err(|(line, text)| EdgeListError::Malformed {
        path: path.to_path_buf(),
        line,
        text,
    })
}

/// Parses edge-list text; on failure returns the 1-based line and its content.
pub fn parse_edge_list(text: &str) -> Result<Vec<(usize, usize)>, (usize, String)> {
    let mut edges = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|s| !s.is_empty())
            .collect();
        match fields.as_slice() {
            [u, v] => match (u.parse(), v.parse()) {
                (Ok(u), Ok(v)) => edges.push((u, v)),
                _ => return Err((i + 1, raw.to_string())),
            },
            _ => return Err((i + 1, raw.to_string())),
        }
    }
    Ok(edges)
}
