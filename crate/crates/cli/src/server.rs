//! HTTP front end over [`Service`].

use std::net::SocketAddr;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, State};
use axum::http::{header, HeaderValue, Method, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::Router;
use serde::de::DeserializeOwned;
use serde::Serialize;
use tower_http::cors::{AllowOrigin, CorsLayer};

use crate::api::{parse_body, to_body, ApiError, Service};

const BODY_LIMIT: usize = 64 * 1024 * 1024;

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        json_response(status, to_body(&self))
    }
}

fn json_response(status: StatusCode, body: Vec<u8>) -> Response {
    (status, [(header::CONTENT_TYPE, "application/json")], body).into_response()
}

/// Parses the body and runs `op` off the async workers.
async fn call<Req, Resp>(
    svc: Arc<Service>,
    body: Bytes,
    op: fn(&Service, &Req) -> Result<Resp, ApiError>,
) -> Response
where
    Req: DeserializeOwned + Send + 'static,
    Resp: Serialize + Send + 'static,
{
    let req: Req = match parse_body(&body) {
        Ok(r) => r,
        Err(e) => return e.into_response(),
    };
    match tokio::task::spawn_blocking(move || op(&svc, &req).map(|r| to_body(&r))).await {
        Ok(Ok(bytes)) => json_response(StatusCode::OK, bytes),
        Ok(Err(e)) => e.into_response(),
        Err(e) => ApiError {
            status: 500,
            code: "internal".into(),
            message: e.to_string(),
            detail: serde_json::Value::Null,
        }
        .into_response(),
    }
}

macro_rules! route {
    ($name:ident, $method:ident) => {
        async fn $name(State(svc): State<Arc<Service>>, body: Bytes) -> Response {
            call(svc, body, Service::$method).await
        }
    };
}

route!(encode, encode);
route!(decode, decode);
route!(text_to_motion, text_to_motion);
route!(interpolate, interpolate);
route!(edit, edit);
route!(classify, classify);
route!(render_frame, render_frame);

async fn model_info(State(svc): State<Arc<Service>>) -> Response {
    json_response(StatusCode::OK, to_body(svc.info()))
}

async fn not_found() -> ApiError {
    ApiError {
        status: 404,
        code: "not_found".into(),
        message: "no such endpoint".into(),
        detail: serde_json::Value::Null,
    }
}

/// CORS for `origins`, or for any origin when empty.
pub fn cors(origins: &[String]) -> anyhow::Result<CorsLayer> {
    let allow = if origins.is_empty() {
        AllowOrigin::any()
    } else {
        let list = origins
            .iter()
            .map(|o| HeaderValue::from_str(o))
            .collect::<Result<Vec<_>, _>>()?;
        AllowOrigin::list(list)
    };
    Ok(CorsLayer::new()
        .allow_origin(allow)
        .allow_methods([Method::GET, Method::POST, Method::OPTIONS])
        .allow_headers([header::CONTENT_TYPE]))
}

pub fn router(svc: Arc<Service>, cors: CorsLayer) -> Router {
    Router::new()
        .route("/model-info", get(model_info))
        .route("/encode", post(encode))
        .route("/decode", post(decode))
        .route("/text-to-motion", post(text_to_motion))
        .route("/interpolate", post(interpolate))
        .route("/edit", post(edit))
        .route("/classify", post(classify))
        .route("/render-frame", post(render_frame))
        .fallback(not_found)
        .layer(DefaultBodyLimit::max(BODY_LIMIT))
        .layer(cors)
        .with_state(svc)
}

/// Binds `addr` and serves until interrupted. The bound address is passed to
/// `on_bind` before requests are accepted.
pub async fn serve(
    svc: Arc<Service>,
    addr: SocketAddr,
    cors: CorsLayer,
    on_bind: impl FnOnce(SocketAddr),
) -> anyhow::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    on_bind(listener.local_addr()?);
    axum::serve(listener, router(svc, cors))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
