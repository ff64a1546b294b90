//! HTTP/JSON API and server-sent event stream over one running building.
//!
//! Every response carries the payload schema version in the
//! `x-bsmart-schema` header. Mutating requests name their actor in
//! `x-actor-id` and may carry a retry key in `x-request-id`; a retried
//! request returns the original outcome without acting twice.

use axum::extract::rejection::JsonRejection;
use axum::extract::{FromRequest, Path, Query, Request, State};
use axum::http::{HeaderMap, HeaderValue, StatusCode};
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use bsmart_core::interfacing::{Resolution, TicketError};
use bsmart_core::runtime::{ApiError, Building, RequestContext, TimelineEntry, SCHEMA_VERSION};
use bsmart_core::simulator::ComfortBand;
use futures::stream::{self, Stream};
use serde::{Deserialize, Serialize};
use std::convert::Infallible;
use std::net::SocketAddr;
use std::sync::{Arc, Mutex, MutexGuard};
use tokio::sync::broadcast;

pub const ACTOR_HEADER: &str = "x-actor-id";
pub const REQUEST_HEADER: &str = "x-request-id";
pub const SCHEMA_HEADER: &str = "x-bsmart-schema";

/// Shared handle on the building. Every mutation goes through [`Hub::with`],
/// which also fans the resulting timeline entries out to stream listeners.
pub struct Hub {
    building: Mutex<Building>,
    published: Mutex<u64>,
    tx: broadcast::Sender<TimelineEntry>,
}

impl Hub {
    pub fn new(building: Building) -> Arc<Self> {
        let (tx, _) = broadcast::channel(4096);
        let published = building.timeline().len() as u64;
        Arc::new(Self {
            building: Mutex::new(building),
            published: Mutex::new(published),
            tx,
        })
    }

    fn lock(&self) -> MutexGuard<'_, Building> {
        self.building.lock().unwrap_or_else(|p| p.into_inner())
    }

    /// Runs `f` against the building and publishes what it added to the
    /// timeline.
    pub fn with<R>(&self, f: impl FnOnce(&mut Building) -> R) -> R {
        let mut b = self.lock();
        let out = f(&mut b);
        let mut published = self.published.lock().unwrap_or_else(|p| p.into_inner());
        for e in b.timeline_since(*published) {
            let _ = self.tx.send(e.clone());
        }
        *published = b.timeline().len() as u64;
        out
    }

    /// Read-only access; publishes nothing.
    pub fn read<R>(&self, f: impl FnOnce(&Building) -> R) -> R {
        f(&self.lock())
    }

    pub fn subscribe(&self) -> broadcast::Receiver<TimelineEntry> {
        self.tx.subscribe()
    }
}

#[derive(Debug, Serialize)]
struct ErrorBody {
    schema: u32,
    #[serde(flatten)]
    error: ApiError,
    message: String,
}

/// API failure with its HTTP status.
pub struct HttpError(pub ApiError);

impl From<ApiError> for HttpError {
    fn from(e: ApiError) -> Self {
        Self(e)
    }
}

pub fn status_of(e: &ApiError) -> StatusCode {
    match e {
        ApiError::NotFound(_) | ApiError::UnsupportedReport { .. } => StatusCode::NOT_FOUND,
        ApiError::Ticket(TicketError::NotFound(_)) => StatusCode::NOT_FOUND,
        ApiError::Ticket(TicketError::Anonymous) => StatusCode::UNAUTHORIZED,
        ApiError::Ticket(TicketError::Foreign { .. }) => StatusCode::FORBIDDEN,
        ApiError::Ticket(TicketError::WrongResolution { .. }) | ApiError::BadRequest(_) => StatusCode::BAD_REQUEST,
        ApiError::Ticket(_) | ApiError::Conflict(_) => StatusCode::CONFLICT,
        ApiError::Storage(_) | ApiError::Runtime(_) => StatusCode::INTERNAL_SERVER_ERROR,
    }
}

impl IntoResponse for HttpError {
    fn into_response(self) -> Response {
        let body = ErrorBody {
            schema: SCHEMA_VERSION,
            message: self.0.to_string(),
            error: self.0,
        };
        (status_of(&body.error), Json(body)).into_response()
    }
}

type ApiResult<T> = Result<Json<T>, HttpError>;

/// JSON request body whose rejections use the API error shape.
pub struct Body<T>(pub T);

impl<S, T> FromRequest<S> for Body<T>
where
    Json<T>: FromRequest<S, Rejection = JsonRejection>,
    S: Send + Sync,
{
    type Rejection = HttpError;

    async fn from_request(req: Request, state: &S) -> Result<Self, Self::Rejection> {
        Json::<T>::from_request(req, state)
            .await
            .map(|Json(v)| Body(v))
            .map_err(|e| HttpError(ApiError::BadRequest(e.body_text())))
    }
}

fn context(headers: &HeaderMap) -> RequestContext {
    let get = |name: &str| {
        headers
            .get(name)
            .and_then(|v| v.to_str().ok())
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(str::to_string)
    };
    RequestContext::new(get(ACTOR_HEADER).unwrap_or_default(), get(REQUEST_HEADER))
}

fn require_actor(ctx: &RequestContext) -> Result<(), HttpError> {
    if ctx.actor.is_empty() {
        return Err(HttpError(ApiError::Ticket(TicketError::Anonymous)));
    }
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ResolveBody {
    pub resolution: Resolution,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WaiveBody {
    pub device_id: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ComfortBody {
    pub zone: String,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdvanceBody {
    pub ticks: u64,
}

#[derive(Debug, Clone, Default, Deserialize)]
pub struct SinceQuery {
    #[serde(default)]
    pub since: Option<u64>,
}

async fn status(State(hub): State<Arc<Hub>>) -> Response {
    Json(hub.read(|b| b.status())).into_response()
}

async fn events(State(hub): State<Arc<Hub>>) -> Response {
    Json(hub.read(|b| b.event_records())).into_response()
}

async fn tickets(State(hub): State<Arc<Hub>>) -> Response {
    Json(hub.read(|b| b.ticket_list())).into_response()
}

async fn report(State(hub): State<Arc<Hub>>, Path(name): Path<String>) -> ApiResult<serde_json::Value> {
    Ok(Json(hub.read(|b| b.describe(&name))?))
}

async fn timeline(State(hub): State<Arc<Hub>>, Query(q): Query<SinceQuery>) -> Response {
    Json(hub.read(|b| b.timeline_since(q.since.unwrap_or(0)).to_vec())).into_response()
}

async fn ack(State(hub): State<Arc<Hub>>, headers: HeaderMap, Path(id): Path<String>) -> ApiResult<impl Serialize> {
    let ctx = context(&headers);
    Ok(Json(hub.with(|b| b.acknowledge(&ctx, &id))?))
}

async fn resolve(
    State(hub): State<Arc<Hub>>,
    headers: HeaderMap,
    Path(id): Path<String>,
    Body(body): Body<ResolveBody>,
) -> ApiResult<impl Serialize> {
    let ctx = context(&headers);
    Ok(Json(hub.with(|b| b.resolve(&ctx, &id, body.resolution))?))
}

async fn waive(State(hub): State<Arc<Hub>>, headers: HeaderMap, Body(body): Body<WaiveBody>) -> ApiResult<impl Serialize> {
    let ctx = context(&headers);
    Ok(Json(hub.with(|b| b.waive(&ctx, &body.device_id))?))
}

async fn comfort(State(hub): State<Arc<Hub>>, headers: HeaderMap, Body(body): Body<ComfortBody>) -> ApiResult<impl Serialize> {
    let ctx = context(&headers);
    let band = ComfortBand {
        lower: body.lower,
        upper: body.upper,
    };
    Ok(Json(hub.with(|b| b.comfort(&ctx, &body.zone, band))?))
}

async fn commission(State(hub): State<Arc<Hub>>, headers: HeaderMap) -> ApiResult<impl Serialize> {
    let ctx = context(&headers);
    require_actor(&ctx)?;
    Ok(Json(hub.with(|b| b.commission(&ctx))?))
}

async fn advance(State(hub): State<Arc<Hub>>, headers: HeaderMap, Body(body): Body<AdvanceBody>) -> ApiResult<impl Serialize> {
    let ctx = context(&headers);
    require_actor(&ctx)?;
    let out = tokio::task::spawn_blocking(move || hub.with(|b| b.advance(&ctx, body.ticks)))
        .await
        .map_err(|e| HttpError(ApiError::Runtime(e.to_string())))??;
    Ok(Json(out))
}

fn sse_event(e: &TimelineEntry) -> Event {
    Event::default()
        .event("timeline")
        .id(e.seq.to_string())
        .data(serde_json::to_string(e).unwrap_or_default())
}

/// Replays the timeline from `since` (or from `Last-Event-ID` + 1 on a
/// reconnect) and then follows it live.
async fn stream_events(
    State(hub): State<Arc<Hub>>,
    headers: HeaderMap,
    Query(q): Query<SinceQuery>,
) -> Sse<impl Stream<Item = Result<Event, Infallible>>> {
    let resume = headers
        .get("last-event-id")
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.parse::<u64>().ok())
        .map(|n| n + 1);
    let since = resume.or(q.since).unwrap_or(0);
    let rx = hub.subscribe();
    let backlog: Vec<TimelineEntry> = hub.read(|b| b.timeline_since(since).to_vec());
    let next = backlog.last().map_or(since, |e| e.seq + 1);
    let head = stream::iter(backlog.into_iter().map(|e| Ok(sse_event(&e))));
    let live = stream::unfold((rx, next), |(mut rx, next)| async move {
        loop {
            match rx.recv().await {
                Ok(e) if e.seq < next => continue,
                Ok(e) => {
                    let ev = sse_event(&e);
                    return Some((Ok(ev), (rx, e.seq + 1)));
                }
                Err(broadcast::error::RecvError::Lagged(n)) => {
                    tracing::warn!(skipped = n, "stream listener lagged; client should reconnect with Last-Event-ID");
                    let ev = Event::default().event("lagged").data(n.to_string());
                    return Some((Ok(ev), (rx, next)));
                }
                Err(broadcast::error::RecvError::Closed) => return None,
            }
        }
    });
    use futures::StreamExt;
    Sse::new(head.chain(live)).keep_alive(KeepAlive::default())
}

pub fn router(hub: Arc<Hub>) -> Router {
    Router::new()
        .route("/status", get(status))
        .route("/events", get(events))
        .route("/tickets", get(tickets))
        .route("/tickets/{id}/ack", post(ack))
        .route("/tickets/{id}/resolve", post(resolve))
        .route("/commission", post(commission))
        .route("/commission/waive", post(waive))
        .route("/tenant/comfort", post(comfort))
        .route("/advance", post(advance))
        .route("/reports/{name}", get(report))
        .route("/timeline", get(timeline))
        .route("/stream", get(stream_events))
        .layer(axum::middleware::map_response(|mut r: Response| async move {
            r.headers_mut()
                .insert(SCHEMA_HEADER, HeaderValue::from_str(&SCHEMA_VERSION.to_string()).expect("digits"));
            r
        }))
        .with_state(hub)
}

/// Binds `addr` and serves until `shutdown` completes. Returns the bound
/// address through `bound` as soon as the listener is up.
pub async fn serve(
    hub: Arc<Hub>,
    addr: SocketAddr,
    bound: Option<tokio::sync::oneshot::Sender<SocketAddr>>,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    let local = listener.local_addr()?;
    tracing::info!(%local, "API listening");
    if let Some(tx) = bound {
        let _ = tx.send(local);
    }
    axum::serve(listener, router(hub)).with_graceful_shutdown(shutdown).await
}
