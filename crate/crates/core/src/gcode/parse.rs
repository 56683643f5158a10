use super::emit::{GcodeProgram, Line, Word};
use super::{GcodeError, ParseErrorKind};

fn err(line: usize, kind: ParseErrorKind) -> GcodeError {
    GcodeError::Parse { line, kind }
}

/// Drops `( ... )` and `;` comments.
fn strip_comments(raw: &str, line: usize) -> Result<String, GcodeError> {
    let mut out = String::with_capacity(raw.len());
    let mut in_paren = false;
    for c in raw.chars() {
        match (in_paren, c) {
            (false, ';') => break,
            (false, '(') => in_paren = true,
            (false, _) => out.push(c),
            (true, ')') => in_paren = false,
            (true, _) => {}
        }
    }
    if in_paren {
        return Err(err(line, ParseErrorKind::UnclosedComment));
    }
    Ok(out)
}

fn parse_number(token: &str, line: usize) -> Result<f64, GcodeError> {
    let digits = token.strip_prefix(['+', '-']).unwrap_or(token);
    let well_formed = !digits.is_empty()
        && digits.chars().all(|c| c.is_ascii_digit() || c == '.')
        && digits.chars().filter(|&c| c == '.').count() <= 1
        && digits.chars().any(|c| c.is_ascii_digit());
    let value = if well_formed { token.parse::<f64>().ok() } else { None };
    match value {
        Some(v) if v.is_finite() => Ok(v),
        _ => Err(err(line, ParseErrorKind::MalformedNumber(token.to_string()))),
    }
}

fn tokenize(text: &str, line: usize) -> Result<Vec<Word>, GcodeError> {
    let chars: Vec<char> = text.chars().collect();
    let mut words = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            i += 1;
            continue;
        }
        if !c.is_ascii_alphabetic() {
            let token: String = chars[i..].iter().take_while(|c| !c.is_whitespace()).collect();
            return Err(err(line, ParseErrorKind::MalformedNumber(token)));
        }
        let letter = c.to_ascii_uppercase();
        i += 1;
        let start = i;
        while i < chars.len() && !chars[i].is_whitespace() && !chars[i].is_ascii_alphabetic() {
            i += 1;
        }
        let token: String = chars[start..i].iter().collect();
        let value = parse_number(&token, line).map_err(|_| {
            err(line, ParseErrorKind::MalformedNumber(format!("{letter}{token}")))
        })?;
        words.push(Word { letter, value });
    }
    Ok(words)
}

fn command_name(w: &Word) -> String {
    if w.value.fract() == 0.0 {
        format!("{}{}", w.letter, w.value as i64)
    } else {
        format!("{}{}", w.letter, w.value)
    }
}

/// Parses the supported G-code subset. Lowercase letters are accepted and
/// normalized; comments and blank lines are dropped. Errors carry the
/// 1-based line number.
pub fn parse_gcode(text: &str) -> Result<GcodeProgram, GcodeError> {
    let mut lines = Vec::new();
    let mut motion: Option<u8> = None;
    for (idx, raw) in text.split('\n').enumerate() {
        let line_no = idx + 1;
        let raw = raw.strip_suffix('\r').unwrap_or(raw);
        let words = tokenize(&strip_comments(raw, line_no)?, line_no)?;
        if words.is_empty() {
            continue;
        }

        let mut seen: Vec<char> = Vec::new();
        let mut line_motion = None;
        let mut spindle_on = false;
        for w in &words {
            match w.letter {
                'G' => match w.value {
                    v if v == 0.0 || v == 1.0 => {
                        if line_motion.is_some() {
                            return Err(err(line_no, ParseErrorKind::ConflictingMotion));
                        }
                        line_motion = Some(v as u8);
                    }
                    v if v == 21.0 || v == 90.0 => {}
                    _ => return Err(err(line_no, ParseErrorKind::UnsupportedCommand(command_name(w)))),
                },
                'M' => match w.value {
                    v if v == 3.0 => spindle_on = true,
                    v if v == 5.0 => {}
                    _ => return Err(err(line_no, ParseErrorKind::UnsupportedCommand(command_name(w)))),
                },
                'X' | 'Y' | 'Z' | 'F' | 'S' => {
                    if seen.contains(&w.letter) {
                        return Err(err(line_no, ParseErrorKind::DuplicateWord(w.letter)));
                    }
                    seen.push(w.letter);
                }
                _ => return Err(err(line_no, ParseErrorKind::UnsupportedCommand(command_name(w)))),
            }
        }
        let line = Line { line_no, words };
        if spindle_on {
            match line.get('S') {
                None => return Err(err(line_no, ParseErrorKind::MissingSpindleSpeed)),
                Some(s) if s < 0.0 || s.fract() != 0.0 => {
                    return Err(err(line_no, ParseErrorKind::InvalidValue(format!("spindle speed {s} is not a whole number"))))
                }
                Some(_) => {}
            }
        }
        if let Some(f) = line.get('F') {
            if f <= 0.0 {
                return Err(err(line_no, ParseErrorKind::InvalidValue(format!("feed rate {f} must be positive"))));
            }
        }
        if line_motion.is_some() {
            motion = line_motion;
        }
        let has_coords = ['X', 'Y', 'Z'].iter().any(|&c| line.get(c).is_some());
        if has_coords && motion.is_none() {
            return Err(err(line_no, ParseErrorKind::MissingMotionMode));
        }
        lines.push(line);
    }
    Ok(GcodeProgram { lines })
}
