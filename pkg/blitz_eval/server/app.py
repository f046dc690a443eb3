"""
blitz-eval MCP Server

Model Context Protocol server exposing the evaluation engine as tools:
grid building, blitz apportioning, synthetic data, pipeline runs, effects
arithmetic and Wald tests on saved fits.

Copyright (C) 2025 Dynamic Devices Ltd
License: GPL-3.0-or-later
"""

import asyncio
import json
import time
import uuid
from typing import Any, Dict, List

from mcp.server import Server
from mcp.server.stdio import stdio_server
from mcp.types import EmbeddedResource, TextContent, TextResourceContents, Tool

from blitz_eval.config import validate_config
from blitz_eval.resources.health import get_health_status
from blitz_eval.server.tool_definitions import get_all_tools
from blitz_eval.server.tool_handlers import handle_tool
from blitz_eval.utils.logger import get_logger, log_tool_call, setup_logger
from blitz_eval.version import __version__

# Initialize logger
setup_logger()
logger = get_logger()

HEALTH_URI = "health://status"

# Initialize MCP server
server = Server("blitz-eval")


@server.list_tools()
async def handle_list_tools() -> List[Tool]:
    """List all available tools"""
    logger.debug("Listing tools")
    return get_all_tools()


@server.call_tool()
async def handle_call_tool(name: str, arguments: Dict[str, Any]) -> List[TextContent]:
    """Handle tool execution requests"""
    request_id = str(uuid.uuid4())[:8]
    start_time = time.time()

    log_tool_call(name, arguments, request_id)
    logger.debug(f"[{request_id}] Executing tool: {name}")

    # blocking engine call
    return await asyncio.to_thread(handle_tool, name, arguments, request_id, start_time)


@server.list_resources()
async def handle_list_resources() -> List[EmbeddedResource]:
    """List all available resources"""
    logger.debug("Listing resources")
    return [
        EmbeddedResource(
            type="resource",
            resource=TextResourceContents(
                uri=HEALTH_URI,
                text="",  # Content fetched on-demand via read_resource
                mimeType="application/json",
            ),
        ),
    ]


@server.read_resource()
async def handle_read_resource(uri: Any) -> str:
    """Handle resource read requests"""
    uri = str(uri)
    logger.debug(f"Reading resource: {uri}")

    if uri == HEALTH_URI:
        return json.dumps(get_health_status(), indent=2)

    logger.warning(f"Unknown resource requested: {uri}")
    return json.dumps({"error": f"Unknown resource: {uri}"}, indent=2)


async def run():
    """Serve over stdio until the client disconnects"""
    is_valid, errors = validate_config()
    if not is_valid:
        logger.error("Configuration validation failed:")
        for error in errors:
            logger.error(f"  - {error}")
        logger.warning("Tools that need a default configuration will fail.")
    else:
        logger.info("Configuration validated successfully")

    logger.info(f"MCP Server starting (version {__version__})")
    logger.info("Server ready, waiting for requests...")

    async with stdio_server() as (read_stream, write_stream):
        await server.run(read_stream, write_stream, server.create_initialization_options())


def main():
    """Console entry point (blitz-eval-server)"""
    asyncio.run(run())


if __name__ == "__main__":
    main()
