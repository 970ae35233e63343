import os, sys

sys.path.append(os.path.abspath(os.path.dirname(__file__)))
from IdeologyProject.report import cli_dispatch
from dotenv import load_dotenv
load_dotenv()



if __name__ == "__main__":
    sys.exit(cli_dispatch(sys.argv[1:]))
