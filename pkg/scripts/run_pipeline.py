import sys

from relaynet.pipelines.runner import pipeline_configs, run_pipeline


def main(args):
    names = [arg for arg in args[1:] if arg in pipeline_configs] or list(pipeline_configs)
    for pipeline_name in names:
        run_pipeline(pipeline_name)


if __name__ == "__main__":
    main(sys.argv)
