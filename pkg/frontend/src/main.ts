import { boot } from './ui'

boot().catch((error) => {
  const banner = document.getElementById('error-banner')
  if (banner) {
    banner.textContent = `failed to load session: ${String(error)}`
    banner.hidden = false
  }
})
