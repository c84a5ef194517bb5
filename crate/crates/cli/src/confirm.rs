//! Terminal confirmation of an interpretation: accept, edit, or reject.

use std::io::{self, BufRead, Write};

use auditnet_core::interpreter::{Interpretation, Slot, SlotEdits};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Decision {
    Accept(SlotEdits),
    Reject,
}

fn read_line(input: &mut impl BufRead) -> io::Result<Option<String>> {
    let mut line = String::new();
    if input.read_line(&mut line)? == 0 {
        return Ok(None);
    }
    Ok(Some(line.trim().to_string()))
}

pub fn describe(interp: &Interpretation) -> String {
    Slot::ALL
        .iter()
        .map(|&s| format!("  {:<10}{}", format!("{}:", s.name()), interp.slot(s).unwrap_or("(not detected)")))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Shows the slots on `prompt` and reads the decision from `input`. When
/// editing, an empty answer keeps a slot and `-` clears it. End of input
/// rejects.
pub fn ask(interp: &Interpretation, input: &mut impl BufRead, prompt: &mut impl Write) -> io::Result<Decision> {
    writeln!(prompt, "Interpreted query:\n{}", describe(interp))?;
    loop {
        write!(prompt, "Confirm? [y]es / [e]dit / [n]o: ")?;
        prompt.flush()?;
        let Some(answer) = read_line(input)? else {
            return Ok(Decision::Reject);
        };
        match answer.to_ascii_lowercase().as_str() {
            "y" | "yes" | "" => return Ok(Decision::Accept(SlotEdits::default())),
            "n" | "no" => return Ok(Decision::Reject),
            "e" | "edit" => {
                let mut edits = SlotEdits::default();
                for &slot in Slot::ALL.iter() {
                    write!(
                        prompt,
                        "{} [{}] (enter keeps, - clears): ",
                        slot.name(),
                        interp.slot(slot).unwrap_or("")
                    )?;
                    prompt.flush()?;
                    let Some(value) = read_line(input)? else {
                        return Ok(Decision::Reject);
                    };
                    edits = match value.as_str() {
                        "" => edits,
                        "-" => edits.set(slot, None),
                        v => edits.set(slot, Some(v)),
                    };
                }
                return Ok(Decision::Accept(edits));
            }
            other => writeln!(prompt, "unrecognized answer {other:?}")?,
        }
    }
}
