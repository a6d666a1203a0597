import settings  # noqa: F401  (thread caps before numpy loads)
from includes.menu import cli

if __name__ == "__main__":
    cli(prog_name="cvt")
