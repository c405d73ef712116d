import asyncio
import sys

import dotenv

from pipeline.runner import run


async def main():
    dotenv.load_dotenv()
    return await run(sys.argv[1:])


if __name__ == "__main__":
    sys.exit(asyncio.run(main()))
