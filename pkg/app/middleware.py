from fastapi import Request
import time
import logging


logger = logging.getLogger(__name__)


async def decision_log_middleware(request: Request, call_next):
    start_time = time.perf_counter()
    response = await call_next(request)
    process_time = time.perf_counter() - start_time

    line = getattr(request.state, "decision_line", None)
    if line is not None:
        # на каждый запрос к sidecar, поэтому DEBUG
        logger.debug(f"decision {line} time={process_time:.4f}s")
    else:
        logger.debug(
            f"Method: {request.method} Path: {request.url.path} "
            f"Status: {response.status_code} Time: {process_time:.4f}s"
        )

    return response
