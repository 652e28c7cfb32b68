from concurrent.futures import ThreadPoolExecutor

from utils.settings import WORKERS

executor = ThreadPoolExecutor(max_workers=WORKERS)
