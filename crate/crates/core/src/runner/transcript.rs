use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use serde_json::Value;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Speaker {
    User,
    Agent,
    Tool,
    AiSummary,
}

/// One line of a session transcript. `injected` marks gold content the
/// runner supplied after a failure (teacher forcing); such turns are not
/// agent output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Turn {
    pub case_id: String,
    pub mission: usize,
    pub speaker: Speaker,
    pub payload: Value,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub injected: bool,
}

/// Writes turns as JSON lines.
pub fn write_transcripts<'a>(mut out: impl Write, turns: impl IntoIterator<Item = &'a Turn>) -> std::io::Result<()> {
    for turn in turns {
        serde_json::to_writer(&mut out, turn)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_transcripts(input: impl BufRead) -> std::io::Result<Vec<Turn>> {
    let mut turns = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let turn = serde_json::from_str(&line).map_err(|e| {
            std::io::Error::new(std::io::ErrorKind::InvalidData, format!("transcript line {}: {e}", i + 1))
        })?;
        turns.push(turn);
    }
    Ok(turns)
}
