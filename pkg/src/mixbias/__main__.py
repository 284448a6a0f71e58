from mixbias.cli import main

main()
