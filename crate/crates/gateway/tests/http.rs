mod common;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use common::*;
use http_body_util::BodyExt;
use sdl_gateway::engine::{Engine, FieldResponse, GenerateResponse, SpectraResponse};
use sdl_gateway::http::router;
use sdl_gateway::manifest::RunManifest;
use std::sync::Arc;
use tower::ServiceExt;

fn app() -> axum::Router {
    router(Arc::new(Engine::new(Some(fixture().root.clone()), 64)), 2)
}

async fn call(app: &axum::Router, method: &str, uri: &str, body: Option<&str>) -> (StatusCode, Vec<u8>) {
    let req = Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", "application/json")
        .body(body.map_or_else(Body::empty, |b| Body::from(b.to_string())))
        .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    (status, resp.into_body().collect().await.unwrap().to_bytes().to_vec())
}

fn parse<T: serde::de::DeserializeOwned>(bytes: &[u8]) -> T {
    serde_json::from_slice(bytes).unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(bytes)))
}

#[tokio::test]
async fn lists_runs() {
    let app = app();
    let (st, b) = call(&app, "GET", "/runs", None).await;
    assert_eq!(st, StatusCode::OK);
    let runs: Vec<RunManifest> = parse(&b);
    assert_eq!(runs.iter().map(|r| r.run_id.as_str()).collect::<Vec<_>>(), vec!["r1"]);
    let (st, _) = call(&app, "GET", "/runs/r1", None).await;
    assert_eq!(st, StatusCode::OK);
}

#[tokio::test]
async fn field_matches_cli_replay() {
    let f = fixture();
    let app = app();
    let (st, b) = call(&app, "GET", "/runs/r1/field?member=1&step=2&variable=tracer&companions=true", None).await;
    assert_eq!(st, StatusCode::OK);
    let field: FieldResponse = parse(&b);
    assert_eq!(field.dims, [16, 16]);
    assert_eq!(field.values.len(), 16 * 16);
    assert_eq!(field.ensemble_mean.as_ref().unwrap().len(), 256);

    let out = f.dir.join("http-replay");
    ok(&["replay", "--run", s(&f.run()), "--member", "1", "--out", s(&out)]);
    let states = read_f32(&out.join("states.f32"));
    // lead 2, variable 1 of a (3, 3, 16, 16) trajectory
    let off = (1 * 3 + 1) * 256;
    assert_eq!(field.values, states[off..off + 256]);
    assert_eq!(field.min, field.values.iter().cloned().fold(f32::INFINITY, f32::min));

    let (_, b) = call(&app, "GET", "/runs/r1/field?member=0&step=0&variable=0", None).await;
    let init: FieldResponse = parse(&b);
    let archive = sdl_core::latents::LatentArchive::read(&f.run().join("archive.sdla")).unwrap();
    assert_eq!(init.values, archive.initial[..256]);
}

#[tokio::test]
async fn generate_matches_cli_rescale() {
    let f = fixture();
    let app = app();
    let out = f.dir.join("http-rescale");
    ok(&["rescale", "--run", s(&f.run()), "--beta", "2,1,-1", "--out", s(&out)]);
    let mean = read_f32(&out.join("mean.f32"));
    let std = read_f32(&out.join("std.f32"));
    let (st, b) = call(&app, "POST", "/runs/r1/generate", Some(r#"{"beta":[2,1,-1],"step":3,"variable":"speed"}"#)).await;
    assert_eq!(st, StatusCode::OK, "{}", String::from_utf8_lossy(&b));
    let g: GenerateResponse = parse(&b);
    let off = (2 * 3 + 2) * 256;
    assert_eq!(g.mean.values, mean[off..off + 256]);
    assert_eq!(g.std.values, std[off..off + 256]);
    assert_eq!(g.summary.len(), 3);
    assert_eq!(g.members, 3);
}

#[tokio::test]
async fn generate_at_archived_scales_reproduces_members() {
    let app = app();
    let (_, b) = call(&app, "POST", "/runs/r1/generate", Some(r#"{"beta":[1,1,1],"step":3}"#)).await;
    let g: GenerateResponse = parse(&b);
    let mut members = Vec::new();
    for k in 0..3 {
        let (_, b) = call(&app, "GET", &format!("/runs/r1/field?member={k}&step=3&variable=vorticity"), None).await;
        members.push(parse::<FieldResponse>(&b).values);
    }
    for p in 0..256 {
        let m = members.iter().map(|v| v[p] as f64).sum::<f64>() / 3.0;
        assert_eq!(g.mean.values[p], m as f32);
    }
    let (_, b) = call(&app, "POST", "/runs/r1/generate", Some(r#"{"beta":[0,0,0]}"#)).await;
    let zero: GenerateResponse = parse(&b);
    assert!(zero.std.values.iter().all(|&v| v == 0.0));
}

#[tokio::test]
async fn interpolate_endpoint_equals_field() {
    let app = app();
    let (st, b) = call(&app, "POST", "/runs/r1/interpolate", Some(r#"{"member_i":2,"member_j":0,"e":0.0,"step":2}"#)).await;
    assert_eq!(st, StatusCode::OK);
    let i: FieldResponse = parse(&b);
    let (_, b) = call(&app, "GET", "/runs/r1/field?member=2&step=2", None).await;
    assert_eq!(i.values, parse::<FieldResponse>(&b).values);
    let (_, b) = call(
        &app,
        "POST",
        "/runs/r1/interpolate",
        Some(r#"{"member_i":2,"member_j":0,"e":1.0,"step":2,"blend":"nearest"}"#),
    )
    .await;
    let j: FieldResponse = parse(&b);
    let (_, b) = call(&app, "GET", "/runs/r1/field?member=0&step=2", None).await;
    assert_eq!(j.values, parse::<FieldResponse>(&b).values);
}

#[tokio::test]
async fn spectra_baseline_anomaly_is_zero() {
    let app = app();
    let (st, b) = call(&app, "POST", "/runs/r1/spectra", Some(r#"{"level":3,"values":[1.0,-3.0,3.0]}"#)).await;
    assert_eq!(st, StatusCode::OK);
    let r: SpectraResponse = parse(&b);
    assert_eq!(r.wavenumbers.len(), r.reference.len());
    assert!(r.curves[0].anomaly.iter().all(|&e| e == 0.0));
    assert_eq!(r.curves[0].state, r.reference);
    assert!(r.curves[1].anomaly.iter().sum::<f64>() > 0.0);
}

#[tokio::test]
async fn concurrent_requests_agree() {
    let app = app();
    let body = r#"{"beta":[1.5,0.5,2.0],"step":1}"#;
    let calls = (0..4).map(|_| {
        let app = app.clone();
        async move { call(&app, "POST", "/runs/r1/generate", Some(body)).await }
    });
    let results = futures_join(calls.collect()).await;
    for r in &results[1..] {
        assert_eq!(r, &results[0]);
    }
}

async fn futures_join(calls: Vec<impl std::future::Future<Output = (StatusCode, Vec<u8>)> + Send + 'static>) -> Vec<(StatusCode, Vec<u8>)> {
    let handles: Vec<_> = calls.into_iter().map(tokio::spawn).collect();
    let mut out = Vec::new();
    for h in handles {
        out.push(h.await.unwrap());
    }
    out
}

#[tokio::test]
async fn error_statuses() {
    let app = app();
    for (method, uri, body, want) in [
        ("GET", "/runs/nope/field", None, StatusCode::NOT_FOUND),
        ("GET", "/runs/r1/field?member=7", None, StatusCode::NOT_FOUND),
        ("GET", "/runs/r1/field?variable=pressure", None, StatusCode::BAD_REQUEST),
        ("GET", "/runs/r1/field?member=x", None, StatusCode::BAD_REQUEST),
        ("GET", "/runs/r1/field?beta=1,2", None, StatusCode::BAD_REQUEST),
        ("POST", "/runs/r1/generate", Some("{not json"), StatusCode::BAD_REQUEST),
        ("POST", "/runs/r1/generate", Some(r#"{"beta":[1,1]}"#), StatusCode::BAD_REQUEST),
        ("POST", "/runs/r1/interpolate", Some(r#"{"member_i":0,"member_j":1,"e":2}"#), StatusCode::BAD_REQUEST),
        ("POST", "/runs/r1/spectra", Some(r#"{"level":4,"values":[1]}"#), StatusCode::BAD_REQUEST),
        ("POST", "/runs/nope/spectra", Some(r#"{"level":1,"values":[1]}"#), StatusCode::NOT_FOUND),
    ] {
        let (st, b) = call(&app, method, uri, body).await;
        assert_eq!(st, want, "{method} {uri}: {}", String::from_utf8_lossy(&b));
        let v: serde_json::Value = parse(&b);
        assert!(v["error"].is_string() && v["message"].is_string());
    }
}
