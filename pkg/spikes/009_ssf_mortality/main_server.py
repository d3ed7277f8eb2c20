#!/usr/bin/env python3
"""
MCP Server Platform - spike 009 demonstration

Social Security Factor MCP Server

Exposes the SSF rule family and the GGM life expectancy as MCP tools so an
assistant can answer "what factor would I get", "when does my factor reach
one" and "what does a fitted mortality model say about e(x)".

Run with:
    $ uv run python spikes/009_ssf_mortality/main_server.py
    $ SSF_MCP_TRANSPORT=stdio uv run python spikes/009_ssf_mortality/main_server.py

Copyright (c) 2025 LAB271
SPDX-License-Identifier: Apache-2.0
"""

import json
import logging
import os
import sys
from pathlib import Path

from dotenv import load_dotenv
from mcp.server.fastmcp import FastMCP

from cli_io import DEFAULT_TABLES_DIR, SourceCatalog
from clean_logging import setup_clean_logging
from ggm import GgmParams
from metrics import ct1, ct1_feasibility, nra
from rules import (
    RuleMode,
    Scenario,
    WorkerClass,
    benefit,
    benefit_with_transition,
    load_rule_config,
    ssf,
)


def mcp_factory(app_name: str, logger: logging.Logger = None, tables_dir: str | Path | None = None) -> FastMCP:
    """Create and return an SSF MCP server instance."""
    if logger is None:
        logger = logging.getLogger(app_name)

    host = os.environ.get("FASTMCP_HOST", "127.0.0.1")
    port = int(os.environ.get("FASTMCP_PORT", "8000"))

    mcp = FastMCP(app_name, host=host, port=port, stateless_http=True, json_response=True)

    config = load_rule_config()
    catalog = SourceCatalog(tables_dir or os.environ.get("SSF_TABLES_DIR") or DEFAULT_TABLES_DIR)

    @mcp.tool()
    def social_security_factor(age: float, contribution_time: float, life_expectancy: float) -> str:
        """SSF for an age, contribution time (years, bonus included) and e rounded to one decimal."""
        logger.info(f"SSF requested for age={age}, CT={contribution_time}, e={life_expectancy}")
        try:
            value = ssf(age, contribution_time, life_expectancy, config.A)
            return f"SSF = {value:.3f} (unrounded {value:.6f}, A = {config.A})"
        except Exception as e:
            logger.warning(f"SSF error: {e}")
            return f"Error: {e}"

    @mcp.tool()
    def contribution_time_for_unit_factor(age: int, life_expectancy: float) -> str:
        """Contribution time that makes the SSF equal to one, with feasibility per worker class."""
        logger.info(f"CT1 requested for age={age}, e={life_expectancy}")
        try:
            value = ct1(age, life_expectancy, config.A)
            result = f"CT1 at age {age} with e = {life_expectancy}: {value:.2f} years\n"
            for cls in WorkerClass:
                check = ct1_feasibility(age, value, cls, config)
                marker = "✅" if check.feasible else "❌"
                result += (
                    f"  {marker} {cls}: {check} (entry age ok: {check.entry_age_ok}, "
                    f"above minimum ECT: {check.above_min_ect})\n"
                )
            return result
        except Exception as e:
            logger.warning(f"CT1 error: {e}")
            return f"Error: {e}"

    @mcp.tool()
    def normal_retirement_age(
        worker_class: str, entry_age: float, ssf_year: int, source: str = "official", rule: str = "ssf"
    ) -> str:
        """Age at which a full career started at entry_age reaches a factor of one (rule: ssf, combined, points)."""
        logger.info(f"NRA requested for {worker_class}, y={entry_age}, {ssf_year}, {source}, {rule}")
        try:
            scenario = Scenario(ssf_year, catalog.source(source, ssf_year - 2), config, source)
            result = nra(WorkerClass(worker_class), entry_age, scenario, RuleMode(rule))
            return (
                f"NRA for {worker_class} entering at {entry_age:g} in {ssf_year} ({source}, {rule}): "
                f"{result.nra:.2f} with ECT {result.ect_at_nra:.2f}"
            )
        except Exception as e:
            logger.warning(f"NRA error: {e}")
            return f"Error: {e}"

    @mcp.tool()
    def life_expectancy_from_params(a: float, b: float, c: float, sigma2: float, age: float) -> str:
        """Remaining life expectancy at a (possibly fractional) age under GGM parameters."""
        logger.info(f"GGM life expectancy requested at age {age}")
        try:
            params = GgmParams(a, b, c, sigma2)
            value = params.life_expectancy(age)
            return f"e({age:g}) = {value:.4f} years (hazard {params.hazard(age):.6g}, plateau {params.plateau():.4g})"
        except Exception as e:
            logger.warning(f"Life expectancy error: {e}")
            return f"Error: {e}"

    @mcp.tool()
    def benefit_amount(
        mean_salary: float,
        factor: float,
        ceiling: float | None = None,
        floor: float | None = None,
        transition_month: int | None = None,
    ) -> str:
        """Monthly benefit clamped to [floor, ceiling]; transition_month (0-60) applies the transition factor."""
        logger.info(f"Benefit requested for M={mean_salary}, factor={factor}")
        try:
            C = ceiling if ceiling is not None else config.ceiling
            W = floor if floor is not None else config.floor
            if transition_month is None:
                value = benefit(mean_salary, factor, C, W)
            else:
                value = benefit_with_transition(mean_salary, factor, transition_month, C, W)
            return f"Benefit = {value:.2f} (ceiling {C:.2f}, floor {W:.2f})"
        except Exception as e:
            logger.warning(f"Benefit error: {e}")
            return f"Error: {e}"

    @mcp.resource("ssf://rules")
    def rules_resource() -> str:
        """Default rule constants: A, bonuses, minimum ECT, points thresholds, ceiling and floor."""
        return json.dumps(config.to_dict(), sort_keys=True, indent=2)

    return mcp


def main(app_name: str = "ssf_mortality_server"):
    """Run the server with clean logging."""
    load_dotenv()
    transport = os.environ.get("SSF_MCP_TRANSPORT", "streamable-http")
    # stdio owns stdout
    logger = setup_clean_logging(app_name=app_name, stream=sys.stderr if transport == "stdio" else None)

    host = os.environ.get("FASTMCP_HOST", "127.0.0.1")
    port = int(os.environ.get("FASTMCP_PORT", "8000"))

    logger.info("🚀 Starting SSF Mortality MCP Server")
    if transport != "stdio":
        logger.info(f"📍 Endpoint: http://{host}:{port}/mcp")
    logger.info(
        "🔧 Tools: social_security_factor, contribution_time_for_unit_factor, normal_retirement_age, "
        "life_expectancy_from_params, benefit_amount"
    )
    logger.info("📄 Resources: ssf://rules")

    try:
        mcp = mcp_factory(app_name=app_name, logger=logger)
        mcp.run(transport=transport)
    except KeyboardInterrupt:
        logger.info("🛑 Server stopped by user")
    except Exception as e:
        if "ClosedResourceError" in str(e):
            logger.warning("⚠️  Client disconnected unexpectedly - continuing")
        else:
            logger.error(f"❌ Server error: {e}")
            raise


if __name__ == "__main__":  # pragma: no cover
    main()
