//! Minimal evaluator speaking the line-delimited JSON protocol; replies with
//! `y = x[0]`. The first argument selects a behavior, used to exercise the
//! client's error paths:
//!
//! `echo` (default), `chatty` (log lines before each reply), `cost` (adds
//! `cost: 0.5`), `malformed`, `wrong-id`, `hang`, `exit`.

use std::io::{self, BufRead, Write};

use serde_json::{json, Value};

fn main() {
    let mode = std::env::args().nth(1).unwrap_or_else(|| "echo".into());
    let stdin = io::stdin();
    let mut out = io::stdout().lock();
    for line in stdin.lock().lines() {
        let Ok(line) = line else { break };
        let Ok(req) = serde_json::from_str::<Value>(&line) else {
            eprintln!("unparseable request: {line}");
            std::process::exit(2);
        };
        let id = req["id"].as_u64().unwrap_or(0);
        let y = req["x"][0].as_f64().unwrap_or(f64::NAN);
        let reply = match mode.as_str() {
            "chatty" => {
                writeln!(out, "evaluating request {id}").unwrap();
                writeln!(out, "  progress 50%").unwrap();
                json!({"id": id, "y": y})
            }
            "cost" => json!({"id": id, "y": y, "cost": 0.5}),
            "malformed" => {
                writeln!(out, "{{\"id\": {id}, \"y\": oops").unwrap();
                out.flush().unwrap();
                continue;
            }
            "wrong-id" => json!({"id": id + 100, "y": y}),
            "hang" => {
                std::thread::sleep(std::time::Duration::from_secs(3600));
                continue;
            }
            "exit" => {
                eprintln!("evaluator crashed on request {id}");
                std::process::exit(3);
            }
            _ => json!({"id": id, "y": y}),
        };
        writeln!(out, "{reply}").unwrap();
        out.flush().unwrap();
    }
}
