#!/usr/bin/env python3
# -*- coding: utf-8 -*-
'''
OBJECTIVE:
    This script runs the stages of the live-chat intent pipeline for one run configuration. The stages are:
    01. synth: generate a synthetic corpus of labeled browsing sessions and split it into train, val and test,
    02. train: build the vocabulary and train the Longformer+ classifier (optionally over a hyperparameter grid),
    03. classify-eval: evaluate the checkpoint (and any configured text-to-text baselines) on the test split,
    04. generate: ask the generator model for candidate intents under each conditioning variant,
    05. judge: ask the judge model whether each candidate is similar to the true intent,
    06. report: write the JSON and Markdown run report (class reports, Similar@m, judge agreement, probe),
    07. probe: train both model variants on the key-versus-value probe corpus and compare them.

    All artifacts are written to `<output_dir>/<run_id>/`.

DESIGN:
    Each subcommand runs a single stage; `run` runs any sequence of stages given with `--stage` (all six pipeline stages by default). `e2e` boots the mock chat server from the fixture file, runs all six stages against it, and compares the report with the golden report; a missing golden report is a prerequisite error. `e2e --record-golden` writes the golden report instead.
    The exit code tells the failure class: 0 success, 1 other error, 2 config error, 3 missing prerequisite, 4 transport error, 5 metric or parse error.

NOTES:
    * The API key is read from the environment variable named in the gateway config (OPENAI_API_KEY by default).

'''

#####################
# IMPORT OPERATIONS #
#####################
import sys
import argparse
import coloredlogs, logging
from chatintent.errors import ChatIntentError
from chatintent.config import load_run_config, STAGES, PIPELINE_STAGES
from chatintent.pipeline import run_pipeline, run_e2e, mocked_gateways

###############
# AUTHOR INFO #
###############
__author__ = 'chatintent developers'
__copyright__ = 'Copyright (C) 2026 chatintent developers'
__info__ = 'Predict and generate the intents of live-chat customers from their browsing sessions'
__version__ = '2026.10.17.0900'

#############
# FUNCTIONS #
#############


def stages_of(args):
    if args.command == "run":
        return args.stage or list(PIPELINE_STAGES)
    return [args.command]


def main(args):

  # STEP 1. Set up logger
    log = logging.getLogger("chatintent")
    coloredlogs.install(fmt='%(asctime)s [%(levelname)s] %(message)s', level='DEBUG' if args.verbose else 'INFO', logger=log)

    try:
  # STEP 2. Load run configuration
        config, base_dir = load_run_config(args.config, seed = args.seed, endpoint = args.endpoint_override)

  # STEP 3. Run stages, against the mock server if requested
        if args.command == "e2e":
            run_e2e(config, base_dir, args.mock, args.record_golden)
        elif args.mock:
            with mocked_gateways(config, base_dir, args.mock) as (mocked_config, server):
                run_pipeline(mocked_config, stages_of(args), base_dir)
        else:
            run_pipeline(config, stages_of(args), base_dir)
    except ChatIntentError as err:
        if args.verbose:
            log.exception(str(err))
        else:
            log.error(str(err))
        return err.exit_code
    except Exception as err:
        log.exception("Unexpected error: `%s`" % (str(err)))
        return 1
    return 0


def parse_args(argv = None):
    common = argparse.ArgumentParser(add_help = False)
    common.add_argument("-c", "--config", type=str, required=True, help="Path to the JSON run configuration")
    common.add_argument("-s", "--seed", type=int, required=False, help="(Optional) Seed that replaces every seed of the configuration")
    common.add_argument("-e", "--endpoint-override", type=str, required=False, help="(Optional) Chat-completions endpoint used by all gateways")
    common.add_argument("-m", "--mock", type=str, required=False, help="(Optional) Path to a mock fixture; boots the mock server and points all gateways at it")
    common.add_argument("-v", "--verbose", action="store_true", required=False, default=False, help="(Optional) Debug logging and tracebacks")

    parser = argparse.ArgumentParser(description="  --  ".join([__author__, __copyright__, __info__, __version__]))
    commands = parser.add_subparsers(dest="command", required=True)
    for stage in STAGES:
        commands.add_parser(stage, parents=[common], help="Run the `%s` stage" % (stage))
    run_parser = commands.add_parser("run", parents=[common], help="Run a sequence of stages")
    run_parser.add_argument("--stage", action="append", choices=STAGES, help="Stage to run; repeat for several (default: all pipeline stages)")
    e2e_parser = commands.add_parser("e2e", parents=[common], help="Offline end-to-end run against the mock server with golden report comparison")
    e2e_parser.add_argument("--record-golden", action="store_true", default=False, help="(Optional) Write the produced report to the golden path instead of comparing")
    return parser.parse_args(argv)


########
# MAIN #
########

if __name__ == "__main__":
    sys.exit(main(parse_args()))
