//! HTTP and WebSocket front end over a [`SessionHandle`].
//!
//! Handlers never touch device state directly. Commands go through the
//! actors' mailboxes and come back with a request-scoped timeout, so a busy
//! or dead device cannot stall the server.

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::sync::Arc;
use std::time::Duration;

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use gazemesh::timesync::Nanos;
use serde::{Deserialize, Serialize};
use tokio::net::TcpListener;
use tokio::sync::broadcast::error::RecvError;

use crate::device::Action;
use crate::live::CollectiveSeries;
use crate::session::{GazeBatch, SessionHandle, LIVE_HEATMAP_WINDOW_NS};

pub const DEFAULT_BIND: &str = "127.0.0.1:8080";
/// Updates per second on the gaze stream unless the client asks otherwise.
pub const DEFAULT_STREAM_RATE: f64 = 1.0;
const MAX_STREAM_RATE: f64 = 30.0;
const MAX_HEATMAP_RATE: f64 = 1.0;

#[derive(Clone)]
pub struct ApiState {
    pub session: SessionHandle,
}

pub fn router(session: SessionHandle) -> Router {
    Router::new()
        .route("/devices", get(devices))
        .route("/devices/{id}/{action}", post(trigger))
        .route("/session/annotate", post(annotate))
        .route("/metrics/collective", get(collective))
        .route("/streams/gaze", get(gaze_stream))
        .route("/streams/heatmap", get(heatmap_stream))
        .route("/streams/alerts", get(alert_stream))
        .with_state(ApiState { session })
}

/// Serves until the listener fails or `shutdown` resolves.
pub async fn serve(
    listener: TcpListener,
    session: SessionHandle,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, router(session)).with_graceful_shutdown(shutdown).await
}

pub async fn bind(addr: &str) -> std::io::Result<(TcpListener, SocketAddr)> {
    let l = TcpListener::bind(addr).await?;
    let a = l.local_addr()?;
    Ok((l, a))
}

#[derive(Debug, Serialize)]
struct ErrorBody {
    error: String,
}

fn error(status: StatusCode, msg: impl Into<String>) -> Response {
    (status, Json(ErrorBody { error: msg.into() })).into_response()
}

async fn devices(State(st): State<ApiState>) -> Response {
    Json(st.session.status()).into_response()
}

async fn trigger(State(st): State<ApiState>, Path((id, action)): Path<(String, String)>) -> Response {
    let action: Action = match action.parse() {
        Ok(a) => a,
        Err(e) => return error(StatusCode::BAD_REQUEST, e),
    };
    let known = st.session.device_ids().contains(&id);
    let result = st.session.trigger(action, std::slice::from_ref(&id)).await.remove(0);
    let status = match (known, result.ok, result.error.as_deref()) {
        (false, ..) => StatusCode::NOT_FOUND,
        (_, true, _) => StatusCode::OK,
        (_, false, Some(e)) if e.contains("in time") => StatusCode::GATEWAY_TIMEOUT,
        _ => StatusCode::CONFLICT,
    };
    (status, Json(result)).into_response()
}

#[derive(Debug, Deserialize)]
struct AnnotateBody {
    label: String,
}

async fn annotate(State(st): State<ApiState>, Json(body): Json<AnnotateBody>) -> Response {
    match st.session.annotate(&body.label) {
        Ok(a) => Json(a).into_response(),
        Err(e) => error(StatusCode::BAD_REQUEST, e.to_string()),
    }
}

#[derive(Debug, Deserialize)]
struct RangeQuery {
    from_ns: Option<Nanos>,
    to_ns: Option<Nanos>,
}

async fn collective(State(st): State<ApiState>, Query(q): Query<RangeQuery>) -> Response {
    let series = match st.session.live() {
        Some(l) => l.read().series(q.from_ns, q.to_ns),
        None => CollectiveSeries::default(),
    };
    Json(series).into_response()
}

#[derive(Debug, Deserialize)]
struct RateQuery {
    rate: Option<f64>,
}

fn period(rate: Option<f64>, max: f64) -> Result<Duration, Response> {
    let r = rate.unwrap_or(DEFAULT_STREAM_RATE);
    if !(r > 0.0 && r.is_finite()) {
        return Err(error(StatusCode::BAD_REQUEST, "rate must be a positive number"));
    }
    Ok(Duration::from_secs_f64(1.0 / r.min(max)))
}

#[derive(Debug, Serialize)]
struct GazeUpdate<'a> {
    t_ns: Nanos,
    batches: Vec<&'a GazeBatch>,
}

async fn send_json<T: Serialize>(ws: &mut WebSocket, value: &T) -> bool {
    match serde_json::to_string(value) {
        Ok(text) => ws.send(Message::Text(text.into())).await.is_ok(),
        Err(_) => false,
    }
}

async fn gaze_stream(ws: WebSocketUpgrade, State(st): State<ApiState>, Query(q): Query<RateQuery>) -> Response {
    let every = match period(q.rate, MAX_STREAM_RATE) {
        Ok(p) => p,
        Err(r) => return r,
    };
    ws.on_upgrade(move |socket| gaze_loop(socket, st.session, every))
}

/// Collects batches between flushes and sends one merged batch per device
/// per period.
async fn gaze_loop(mut ws: WebSocket, session: SessionHandle, every: Duration) {
    let mut rx = session.subscribe_gaze();
    let mut tick = tokio::time::interval(every);
    tick.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Delay);
    tick.tick().await;
    let mut pending: BTreeMap<Arc<str>, GazeBatch> = BTreeMap::new();
    loop {
        tokio::select! {
            msg = rx.recv() => match msg {
                Ok(b) => pending.entry(b.device_id.clone()).and_modify(|p| p.merge(&b)).or_insert_with(|| (*b).clone()),
                Err(RecvError::Lagged(n)) => {
                    tracing::debug!("gaze subscriber skipped {n} batches");
                    continue;
                }
                Err(RecvError::Closed) => return,
            },
            _ = tick.tick() => {
                if pending.is_empty() {
                    continue;
                }
                let update = GazeUpdate { t_ns: session.now_ns(), batches: pending.values().collect() };
                if !send_json(&mut ws, &update).await {
                    return;
                }
                pending.clear();
                continue;
            }
            incoming = ws.recv() => match incoming {
                Some(Ok(Message::Close(_))) | None | Some(Err(_)) => return,
                Some(Ok(_)) => continue,
            },
        };
    }
}

async fn heatmap_stream(ws: WebSocketUpgrade, State(st): State<ApiState>, Query(q): Query<RateQuery>) -> Response {
    let every = match period(q.rate, MAX_HEATMAP_RATE) {
        Ok(p) => p,
        Err(r) => return r,
    };
    ws.on_upgrade(move |socket| heatmap_loop(socket, st.session, every))
}

#[derive(Debug, Serialize)]
struct HeatmapUpdate<'a> {
    t_ns: Nanos,
    #[serde(flatten)]
    grid: &'a gazemesh::analysis::HeatmapGrid,
}

async fn heatmap_loop(mut ws: WebSocket, session: SessionHandle, every: Duration) {
    let Some(live) = session.live() else {
        let _ = ws.send(Message::Close(None)).await;
        return;
    };
    let settings = session.config().live;
    let mut tick = tokio::time::interval(every);
    tick.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Delay);
    let mut last_sent = None;
    loop {
        tokio::select! {
            _ = tick.tick() => {
                let (t, grid) = {
                    let l = live.read();
                    (l.projected_until, l.heatmap(LIVE_HEATMAP_WINDOW_NS, settings.heatmap_sigma_px, settings.heatmap_cell_px))
                };
                if last_sent == Some(t) {
                    continue;
                }
                let Ok(grid) = grid else { continue };
                if !send_json(&mut ws, &HeatmapUpdate { t_ns: t, grid: &grid }).await {
                    return;
                }
                last_sent = Some(t);
            }
            incoming = ws.recv() => match incoming {
                Some(Ok(Message::Close(_))) | None | Some(Err(_)) => return,
                Some(Ok(_)) => {}
            },
        }
    }
}

async fn alert_stream(ws: WebSocketUpgrade, State(st): State<ApiState>) -> Response {
    ws.on_upgrade(move |socket| alert_loop(socket, st.session))
}

async fn alert_loop(mut ws: WebSocket, session: SessionHandle) {
    let mut rx = session.subscribe_alerts();
    loop {
        tokio::select! {
            ev = rx.recv() => match ev {
                Ok(ev) => {
                    if !send_json(&mut ws, &ev).await {
                        return;
                    }
                }
                Err(RecvError::Lagged(n)) => tracing::warn!("alert subscriber skipped {n} events"),
                Err(RecvError::Closed) => return,
            },
            incoming = ws.recv() => match incoming {
                Some(Ok(Message::Close(_))) | None | Some(Err(_)) => return,
                Some(Ok(_)) => {}
            },
        }
    }
}
