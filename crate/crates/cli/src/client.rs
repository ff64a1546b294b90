//! Thin HTTP client verbs over a running instance.

use crate::{ClientArgs, EXIT_UNREACHABLE};
use bsmart_core::interfacing::Resolution;
use bsmart_server::{ACTOR_HEADER, REQUEST_HEADER};
use reqwest::blocking::{Client, RequestBuilder};
use std::process::ExitCode;
use std::time::Duration;

pub fn parse_resolution(s: &str) -> Option<Resolution> {
    let norm: String = s.chars().filter(|c| c.is_ascii_alphanumeric()).collect::<String>().to_lowercase();
    Some(match norm.as_str() {
        "repaired" | "repairednoequipchange" | "fixed" => Resolution::RepairedNoEquipChange,
        "equipmentchanged" | "replaced" | "upgraded" => Resolution::EquipmentChanged,
        "waived" => Resolution::Waived,
        "noted" => Resolution::Noted,
        "approved" => Resolution::Approved,
        "declined" => Resolution::Declined,
        _ => return None,
    })
}

fn client() -> Client {
    Client::builder()
        .timeout(Duration::from_secs(600))
        .build()
        .expect("HTTP client builds")
}

fn url(api: &ClientArgs, path: &str) -> String {
    format!("{}{}", api.api.trim_end_matches('/'), path)
}

pub fn get(api: &ClientArgs, path: &str) -> ExitCode {
    send(api, client().get(url(api, path)))
}

pub fn post(api: &ClientArgs, path: &str, body: Option<serde_json::Value>) -> ExitCode {
    let request_id = api
        .request_id
        .clone()
        .unwrap_or_else(|| uuid::Uuid::new_v4().to_string());
    eprintln!("request-id: {request_id}");
    let mut req = client()
        .post(url(api, path))
        .header(ACTOR_HEADER, &api.actor)
        .header(REQUEST_HEADER, request_id);
    if let Some(b) = body {
        req = req.json(&b);
    }
    send(api, req)
}

fn send(api: &ClientArgs, req: RequestBuilder) -> ExitCode {
    let resp = match req.send() {
        Ok(r) => r,
        Err(e) => {
            eprintln!(
                "cannot reach the API at {}: {e}\nstart one with `bsmart run --api-addr <addr>` or point --api/BSMART_API at it, then retry (repeat --request-id to retry a mutation safely)",
                api.api
            );
            return ExitCode::from(EXIT_UNREACHABLE);
        }
    };
    let status = resp.status();
    let text = resp.text().unwrap_or_default();
    let pretty = serde_json::from_str::<serde_json::Value>(&text)
        .map(|v| serde_json::to_string_pretty(&v).unwrap_or(text.clone()))
        .unwrap_or(text);
    if status.is_success() {
        println!("{pretty}");
        ExitCode::SUCCESS
    } else {
        eprintln!("{status}\n{pretty}");
        ExitCode::FAILURE
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn resolution_aliases() {
        assert_eq!(parse_resolution("repaired"), Some(Resolution::RepairedNoEquipChange));
        assert_eq!(parse_resolution("RepairedNoEquipChange"), Some(Resolution::RepairedNoEquipChange));
        assert_eq!(parse_resolution("equipment-changed"), Some(Resolution::EquipmentChanged));
        assert_eq!(parse_resolution("Approved"), Some(Resolution::Approved));
        assert_eq!(parse_resolution("maybe"), None);
    }
}
