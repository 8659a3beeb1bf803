from fairx.main import main

raise SystemExit(main())
