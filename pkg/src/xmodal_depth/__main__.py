"""支援 python -m xmodal_depth 執行"""

from xmodal_depth.cli import cli

if __name__ == "__main__":
    cli()
